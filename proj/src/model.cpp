// SPDX-License-Identifier: Apache-2.0
#include "reslora/model.hpp"

#include <algorithm>
#include <cmath>

namespace reslora {

std::string to_string(Activation a) {
  return a == Activation::identity ? "identity" : "tanh";
}

std::string to_string(Structure s) {
  switch (s) {
    case Structure::none: return "none";
    case Structure::input_shortcut: return "is";
    case Structure::block_shortcut: return "bs";
    case Structure::middle_shortcut: return "ms";
  }
  return "none";
}

Activation activation_from_string(const std::string& s) {
  if (s == "identity") return Activation::identity;
  if (s == "tanh") return Activation::tanh;
  throw std::invalid_argument("unknown activation '" + s + "' (expected identity|tanh)");
}

Structure structure_from_string(const std::string& s) {
  if (s == "none") return Structure::none;
  if (s == "is") return Structure::input_shortcut;
  if (s == "bs") return Structure::block_shortcut;
  if (s == "ms") return Structure::middle_shortcut;
  throw std::invalid_argument("unknown structure '" + s + "' (expected none|is|bs|ms)");
}

AdapterBlock make_adapter(SeededRng& rng, std::size_t d_out, std::size_t d_in, int rank,
                          double alpha) {
  AdapterBlock block;
  block.rank = rank;
  block.scale = alpha / static_cast<double>(rank);
  block.a = gaussian_fill(rng, static_cast<std::size_t>(rank), d_in, 0.02);
  block.b = Matrix(d_out, static_cast<std::size_t>(rank));  // zero: model starts at base
  return block;
}

int effective_m(int n, int m, int depth) {
  if (n < 0 || n >= depth) {
    throw std::invalid_argument("effective_m: layer index " + std::to_string(n) +
                                " out of range for depth " + std::to_string(depth));
  }
  if (m < -1) {
    throw std::invalid_argument("effective_m: pre_num must be >= -1, got " + std::to_string(m));
  }
  if (m == -1) return n;
  return std::min(m, n);
}

ResLoraModel::ResLoraModel(std::vector<Layer> layers, Structure structure, int pre_num)
    : layers_(std::move(layers)), structure_(structure), pre_num_(pre_num) {
  validate();
}

void ResLoraModel::validate() const {
  if (layers_.empty()) {
    throw std::invalid_argument("ResLoraModel: at least one layer required");
  }
  if (pre_num_ < -1) {
    throw std::invalid_argument("ResLoraModel: pre_num must be >= -1, got " +
                                std::to_string(pre_num_));
  }
  for (std::size_t n = 0; n < layers_.size(); ++n) {
    const auto& w = layers_[n].base.w;
    const auto& ad = layers_[n].adapter;
    const std::string where = "layer " + std::to_string(n);
    if (ad.rank < 1) {
      throw std::invalid_argument("ResLoraModel: " + where + ": rank must be >= 1");
    }
    const auto rank = static_cast<std::size_t>(ad.rank);
    if (ad.a.rows() != rank || ad.b.cols() != rank) {
      throw ShapeError("ResLoraModel: " + where + ": A " + ad.a.shape_str() + " / B " +
                       ad.b.shape_str() + " inconsistent with rank " + std::to_string(ad.rank));
    }
    if (ad.a.cols() != w.cols() || ad.b.rows() != w.rows()) {
      throw ShapeError("ResLoraModel: " + where + ": adapter A " + ad.a.shape_str() + ", B " +
                       ad.b.shape_str() + " do not bracket W " + w.shape_str());
    }
    if (rank > std::min(w.rows(), w.cols())) {
      throw std::invalid_argument("ResLoraModel: " + where + ": rank " + std::to_string(ad.rank) +
                                  " exceeds min dimension of W " + w.shape_str());
    }
    if (!(ad.scale > 0.0)) {
      throw std::invalid_argument("ResLoraModel: " + where + ": scale must be positive");
    }
    if (n + 1 < layers_.size() && layers_[n + 1].base.w.cols() != w.rows()) {
      throw ShapeError("ResLoraModel: layer " + std::to_string(n + 1) + " input dim " +
                       layers_[n + 1].base.w.shape_str() + " does not chain with layer " +
                       std::to_string(n) + " output dim " + w.shape_str());
    }
  }

  // Shortcut shape gating. Shortcuts chain layer-to-layer, so participation
  // makes every layer's shape constrained to the first's.
  if (structure_ == Structure::input_shortcut && layers_.size() > 1) {
    for (std::size_t n = 1; n < layers_.size(); ++n) {
      if (layers_[n].base.w.cols() != layers_[n - 1].base.w.cols()) {
        throw ShapeError("ResLoraModel: input-shortcut needs equal input dims on adjacent "
                         "layers; layer " + std::to_string(n - 1) + " has d_in " +
                         std::to_string(layers_[n - 1].base.w.cols()) + ", layer " +
                         std::to_string(n) + " has d_in " +
                         std::to_string(layers_[n].base.w.cols()));
      }
    }
  }
  const bool shared_blocks = (structure_ == Structure::block_shortcut ||
                              structure_ == Structure::middle_shortcut) &&
                             pre_num_ != 0 && layers_.size() > 1;
  if (shared_blocks) {
    const auto& w0 = layers_.front().base.w;
    for (std::size_t n = 1; n < layers_.size(); ++n) {
      const auto& wn = layers_[n].base.w;
      if (wn.rows() != w0.rows() || wn.cols() != w0.cols()) {
        throw ShapeError("ResLoraModel: " + to_string(structure_) + " with pre_num " +
                         std::to_string(pre_num_) + " needs identical layer shapes; layer 0 is " +
                         w0.shape_str() + ", layer " + std::to_string(n) + " is " +
                         wn.shape_str());
      }
      if (structure_ == Structure::middle_shortcut &&
          layers_[n].adapter.rank != layers_.front().adapter.rank) {
        throw ShapeError("ResLoraModel: middle-shortcut with pre_num " +
                         std::to_string(pre_num_) + " needs identical ranks; layer 0 has rank " +
                         std::to_string(layers_.front().adapter.rank) + ", layer " +
                         std::to_string(n) + " has rank " +
                         std::to_string(layers_[n].adapter.rank));
      }
    }
  }
}

Matrix apply_activation(Activation act, const Matrix& m) {
  if (act == Activation::identity) return m;
  Matrix out = m;
  for (double& v : out.data()) v = std::tanh(v);
  return out;
}

namespace {

void check_input(const ResLoraModel& model, const Matrix& x) {
  if (x.rows() != model.input_dim()) {
    throw ShapeError("forward: input " + x.shape_str() + " does not match layer-0 input dim " +
                     std::to_string(model.input_dim()));
  }
}

void require_structure(const ResLoraModel& model, Structure expected, const char* fn) {
  if (model.structure() != expected) {
    throw std::invalid_argument(std::string(fn) + ": model structure is " +
                                to_string(model.structure()) + ", expected " +
                                to_string(expected));
  }
}

// Shared layer-loop skeleton. The none path and the bs/ms paths with
// m_eff == 0 must execute the exact same floating-point operation sequence;
// the per-structure branches below are written so the degenerate cases
// collapse to the plain sequence op for op.
ForwardTrace run_forward(const ResLoraModel& model, const Matrix& x, Structure structure) {
  check_input(model, x);
  const int depth = model.depth();
  ForwardTrace trace;
  trace.inputs.reserve(depth);
  trace.adapter_mid.reserve(depth);
  trace.pre_act.reserve(depth);
  trace.post_act.reserve(depth);

  for (int n = 0; n < depth; ++n) {
    const auto& layer = model.layers()[n];
    const Matrix& xn = (n == 0) ? x : trace.post_act[n - 1];
    trace.inputs.push_back(xn);

    Matrix h = matmul(layer.base.w, xn);
    Matrix mid;
    Matrix contrib;
    switch (structure) {
      case Structure::none: {
        mid = matmul(layer.adapter.a, xn);
        contrib = matmul(layer.adapter.b, mid);
        break;
      }
      case Structure::input_shortcut: {
        const Matrix& prev = (n == 0) ? xn : trace.inputs[n - 1];
        mid = matmul(layer.adapter.a, xn + prev);
        contrib = matmul(layer.adapter.b, mid);
        break;
      }
      case Structure::block_shortcut: {
        mid = matmul(layer.adapter.a, xn);
        contrib = matmul(layer.adapter.b, mid);
        const int m_eff = effective_m(n, model.pre_num(), depth);
        for (int k = 1; k <= m_eff; ++k) {
          const auto& prev = model.layers()[n - k].adapter;
          contrib = contrib + matmul(prev.b, matmul(prev.a, xn));
        }
        break;
      }
      case Structure::middle_shortcut: {
        mid = matmul(layer.adapter.a, xn);
        Matrix z = mid;
        const int m_eff = effective_m(n, model.pre_num(), depth);
        for (int k = 1; k <= m_eff; ++k) {
          z = z + trace.adapter_mid[n - k];
        }
        contrib = matmul(layer.adapter.b, z);
        break;
      }
    }
    add_scaled(h, layer.adapter.scale, contrib);

    trace.adapter_mid.push_back(std::move(mid));
    trace.post_act.push_back(apply_activation(layer.base.activation, h));
    trace.pre_act.push_back(std::move(h));
  }
  return trace;
}

}  // namespace

ForwardTrace forward_plain(const ResLoraModel& model, const Matrix& x) {
  return run_forward(model, x, Structure::none);
}

ForwardTrace forward_is(const ResLoraModel& model, const Matrix& x) {
  require_structure(model, Structure::input_shortcut, "forward_is");
  return run_forward(model, x, Structure::input_shortcut);
}

ForwardTrace forward_bs(const ResLoraModel& model, const Matrix& x) {
  require_structure(model, Structure::block_shortcut, "forward_bs");
  return run_forward(model, x, Structure::block_shortcut);
}

ForwardTrace forward_ms(const ResLoraModel& model, const Matrix& x) {
  require_structure(model, Structure::middle_shortcut, "forward_ms");
  return run_forward(model, x, Structure::middle_shortcut);
}

ForwardTrace forward(const ResLoraModel& model, const Matrix& x) {
  switch (model.structure()) {
    case Structure::none: return forward_plain(model, x);
    case Structure::input_shortcut: return forward_is(model, x);
    case Structure::block_shortcut: return forward_bs(model, x);
    case Structure::middle_shortcut: return forward_ms(model, x);
  }
  throw std::invalid_argument("forward: unknown structure tag");
}

Matrix base_forward(const std::vector<BaseLayer>& stack, const Matrix& x) {
  if (stack.empty()) {
    throw std::invalid_argument("base_forward: empty layer stack");
  }
  Matrix cur = x;
  for (const auto& layer : stack) {
    cur = apply_activation(layer.activation, matmul(layer.w, cur));
  }
  return cur;
}

}  // namespace reslora
