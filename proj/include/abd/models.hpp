#pragma once

// The four architectures: single-frame FFN baseline, CNN, DCNN and the
// kernel-fusion dilated CNN. Parallel same-padded dilated branches are
// concatenated along channels, passed through a second convolution, 2x
// max-pooled, flattened and fed to the fully connected head.

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "abd/dataio.hpp"
#include "abd/errors.hpp"
#include "abd/nn.hpp"
#include "abd/tensor.hpp"

namespace abd {

enum class ModelKind { ffn, cnn, dcnn, kfdcnn };

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::ffn: return "ffn";
    case ModelKind::cnn: return "cnn";
    case ModelKind::dcnn: return "dcnn";
    case ModelKind::kfdcnn: return "kfdcnn";
  }
  throw ConfigError("unknown model kind");
}

inline ModelKind model_kind_from_string(const std::string& s) {
  if (s == "ffn") return ModelKind::ffn;
  if (s == "cnn") return ModelKind::cnn;
  if (s == "dcnn") return ModelKind::dcnn;
  if (s == "kfdcnn") return ModelKind::kfdcnn;
  throw ConfigError("unknown model kind '" + s + "'");
}

struct ModelConfig {
  ModelKind kind = ModelKind::kfdcnn;
  WindowSpec window{100, 5};
  std::size_t in_dim = kFeatureDim;
  std::vector<int> branch_kernels = {3, 5, 7};
  int branch_dilation = 5;
  int branch_channels = 16;
  int second_kernel = 3;
  int second_dilation = 1;
  int second_channels = 32;
  std::vector<int> fc_sizes = {40, 20, 2};
  bool crop_to_min = false;  // crop valid branch outputs instead of same-padding
  std::uint64_t seed = 0;

  static ModelConfig defaults(ModelKind kind) {
    ModelConfig c;
    c.kind = kind;
    switch (kind) {
      case ModelKind::kfdcnn:
        break;
      case ModelKind::dcnn:
        c.branch_kernels = {3};
        c.branch_dilation = 5;
        break;
      case ModelKind::cnn:
        c.branch_kernels = {3};
        c.branch_dilation = 1;
        c.window = WindowSpec{20, 1};
        break;
      case ModelKind::ffn:
        c.branch_kernels = {};
        c.window = WindowSpec{1, 1};
        break;
    }
    return c;
  }

  void validate() const {
    if (fc_sizes.empty() || fc_sizes.back() != 2)
      throw ConfigError("fc_sizes must end with the 2-class output layer");
    for (int k : branch_kernels)
      if (k < 1 || k % 2 == 0) throw ConfigError("branch kernels must be odd and positive");
    if (kind == ModelKind::ffn) {
      if (!branch_kernels.empty())
        throw ConfigError("ffn takes no convolutional branches");
    } else {
      if (branch_kernels.empty())
        throw ConfigError(to_string(kind) + " needs at least one branch kernel");
      if (branch_channels < 1 || second_channels < 1)
        throw ConfigError("channel counts must be >= 1");
      window.validate();
    }
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"kind", to_string(c.kind)},
                     {"window_half_span", c.window.half_span},
                     {"window_dilation", c.window.dilation},
                     {"in_dim", c.in_dim},
                     {"branch_kernels", c.branch_kernels},
                     {"branch_dilation", c.branch_dilation},
                     {"branch_channels", c.branch_channels},
                     {"second_kernel", c.second_kernel},
                     {"second_dilation", c.second_dilation},
                     {"second_channels", c.second_channels},
                     {"fc_sizes", c.fc_sizes},
                     {"crop_to_min", c.crop_to_min},
                     {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.kind = model_kind_from_string(j.at("kind").get<std::string>());
  c.window.half_span = j.at("window_half_span").get<int>();
  c.window.dilation = j.at("window_dilation").get<int>();
  c.in_dim = j.at("in_dim").get<std::size_t>();
  c.branch_kernels = j.at("branch_kernels").get<std::vector<int>>();
  c.branch_dilation = j.at("branch_dilation").get<int>();
  c.branch_channels = j.at("branch_channels").get<int>();
  c.second_kernel = j.at("second_kernel").get<int>();
  c.second_dilation = j.at("second_dilation").get<int>();
  c.second_channels = j.at("second_channels").get<int>();
  c.fc_sizes = j.at("fc_sizes").get<std::vector<int>>();
  c.crop_to_min = j.value("crop_to_min", false);
  c.seed = j.at("seed").get<std::uint64_t>();
}

struct Prediction {
  Tensor2 probs;  // batch x 2, rows sum to 1
};

// Per-example activation cache for the backward pass.
struct ForwardCache {
  Tensor2 input;                       // window (conv kinds) ignored for ffn
  std::vector<double> ffn_input;       // center frame (ffn only)
  std::vector<Tensor2> branch_pre;     // pre-ReLU branch outputs
  std::vector<int> branch_crop;        // left crop per branch (crop_to_min)
  Tensor2 concat;                      // post-ReLU concatenated branches
  Tensor2 second_pre;                  // pre-ReLU second conv output
  Tensor2 pooled;
  std::vector<std::size_t> pool_argmax;
  std::vector<double> flat;
  std::vector<std::vector<double>> fc_pre;  // pre-activation per fc layer
  std::vector<double> probs;
};

class Model {
public:
  ModelConfig cfg;
  std::vector<ConvParams> branches;
  ConvParams second;
  std::vector<DenseParams> fc;

  explicit Model(const ModelConfig& config) : cfg(config) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    if (cfg.kind != ModelKind::ffn) {
      for (int k : cfg.branch_kernels) {
        ConvParams p;
        p.kernel = k;
        p.dilation = cfg.branch_dilation;
        p.in_ch = static_cast<int>(cfg.in_dim);
        p.out_ch = cfg.branch_channels;
        p.resize();
        init_uniform(p.w, k * p.in_ch, k * p.out_ch, rng);
        branches.push_back(std::move(p));
      }
      second.kernel = cfg.second_kernel;
      second.dilation = cfg.second_dilation;
      second.in_ch = cfg.branch_channels * static_cast<int>(cfg.branch_kernels.size());
      second.out_ch = cfg.second_channels;
      second.resize();
      init_uniform(second.w, second.kernel * second.in_ch, second.kernel * second.out_ch, rng);
    }
    int prev = flat_dim();
    for (int size : cfg.fc_sizes) {
      DenseParams p;
      p.in = prev;
      p.out = size;
      p.resize();
      init_uniform(p.w, p.in, p.out, rng);
      fc.push_back(std::move(p));
      prev = size;
    }
  }

  int conv_time_len() const {
    if (cfg.crop_to_min) {
      int min_len = cfg.window.rows();
      for (const auto& b : branches)
        min_len = std::min(min_len, cfg.window.rows() - conv1d_span(b) + 1);
      return min_len;
    }
    return cfg.window.rows();
  }

  int flat_dim() const {
    if (cfg.kind == ModelKind::ffn) return static_cast<int>(cfg.in_dim);
    return (conv_time_len() / 2) * cfg.second_channels;
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& b : branches) n += b.w.size() + b.b.size();
    if (cfg.kind != ModelKind::ffn) n += second.w.size() + second.b.size();
    for (const auto& d : fc) n += d.w.size() + d.b.size();
    return n;
  }

  // Flat parameter views in checkpoint order: branches (w, b), second conv
  // (w, b), fc layers (w, b).
  std::vector<std::span<double>> param_blocks() {
    std::vector<std::span<double>> out;
    for (auto& b : branches) {
      out.emplace_back(b.w);
      out.emplace_back(b.b);
    }
    if (cfg.kind != ModelKind::ffn) {
      out.emplace_back(second.w);
      out.emplace_back(second.b);
    }
    for (auto& d : fc) {
      out.emplace_back(d.w);
      out.emplace_back(d.b);
    }
    return out;
  }

  std::vector<double> flat_params() const {
    std::vector<double> out;
    out.reserve(param_count());
    auto blocks = const_cast<Model*>(this)->param_blocks();
    for (auto b : blocks) out.insert(out.end(), b.begin(), b.end());
    return out;
  }

  void set_flat_params(std::span<const double> flat) {
    if (flat.size() != param_count()) throw DataError("parameter block size mismatch");
    std::size_t off = 0;
    for (auto b : param_blocks()) {
      std::copy(flat.begin() + off, flat.begin() + off + b.size(), b.begin());
      off += b.size();
    }
  }

  std::vector<double> forward_one(const Tensor2& window, ForwardCache* cache = nullptr) const {
    ForwardCache local;
    ForwardCache& cc = cache ? *cache : local;
    std::vector<double> flat;
    if (cfg.kind == ModelKind::ffn) {
      // FFN consumes only the center frame of the window.
      const std::size_t center = window.rows() / 2;
      flat.resize(window.cols());
      for (std::size_t c = 0; c < window.cols(); ++c) flat[c] = window(center, c);
      cc.ffn_input = flat;
    } else {
      if (static_cast<int>(window.rows()) != cfg.window.rows() ||
          window.cols() != cfg.in_dim)
        throw ConfigError("forward: window shape does not match model config");
      cc.input = window;
      const int t_len = conv_time_len();
      cc.concat = Tensor2(static_cast<std::size_t>(t_len), static_cast<std::size_t>(second.in_ch));
      cc.branch_pre.clear();
      cc.branch_crop.clear();
      int ch_off = 0;
      for (const auto& b : branches) {
        Tensor2 pre = conv1d_forward(window, b, cfg.crop_to_min ? Padding::valid : Padding::same);
        const int crop = (static_cast<int>(pre.rows()) - t_len) / 2;
        cc.branch_crop.push_back(crop);
        for (int t = 0; t < t_len; ++t)
          for (int co = 0; co < b.out_ch; ++co)
            cc.concat(t, ch_off + co) = std::max(0.0, pre(t + crop, co));
        cc.branch_pre.push_back(std::move(pre));
        ch_off += b.out_ch;
      }
      cc.second_pre = conv1d_forward(cc.concat, second, Padding::same);
      Tensor2 act = cc.second_pre;
      relu_inplace(act);
      cc.pooled = maxpool1d_forward(act, &cc.pool_argmax);
      flat = cc.pooled.data();
      cc.flat = flat;
    }
    cc.fc_pre.clear();
    std::vector<double> x = std::move(flat);
    for (std::size_t i = 0; i < fc.size(); ++i) {
      x = dense_forward(x, fc[i]);
      cc.fc_pre.push_back(x);
      if (i + 1 < fc.size()) relu_inplace(x);
    }
    cc.probs = softmax(x);
    return cc.probs;
  }

  Prediction forward(const std::vector<WindowedExample>& batch) const {
    Prediction pred;
    pred.probs = Tensor2(batch.size(), 2);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto p = forward_one(batch[i].window);
      pred.probs(i, 0) = p[0];
      pred.probs(i, 1) = p[1];
    }
    return pred;
  }

private:
  static void init_uniform(std::vector<double>& w, int fan_in, int fan_out,
                           std::mt19937_64& rng) {
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (double& v : w) v = u(rng);
  }
};

// Gradients mirror the model's parameter layout.
struct ModelGrads {
  std::vector<ConvParams> branches;
  ConvParams second;
  std::vector<DenseParams> fc;
  bool has_conv = false;

  explicit ModelGrads(const Model& m) : has_conv(m.cfg.kind != ModelKind::ffn) {
    for (const auto& b : m.branches) {
      ConvParams g = b;
      std::fill(g.w.begin(), g.w.end(), 0.0);
      std::fill(g.b.begin(), g.b.end(), 0.0);
      branches.push_back(std::move(g));
    }
    if (has_conv) {
      second = m.second;
      std::fill(second.w.begin(), second.w.end(), 0.0);
      std::fill(second.b.begin(), second.b.end(), 0.0);
    }
    for (const auto& d : m.fc) {
      DenseParams g = d;
      std::fill(g.w.begin(), g.w.end(), 0.0);
      std::fill(g.b.begin(), g.b.end(), 0.0);
      fc.push_back(std::move(g));
    }
  }

  std::vector<std::span<double>> param_blocks() {
    std::vector<std::span<double>> out;
    for (auto& b : branches) {
      out.emplace_back(b.w);
      out.emplace_back(b.b);
    }
    if (has_conv) {
      out.emplace_back(second.w);
      out.emplace_back(second.b);
    }
    for (auto& d : fc) {
      out.emplace_back(d.w);
      out.emplace_back(d.b);
    }
    return out;
  }

  void scale(double s) {
    for (auto blk : param_blocks())
      for (double& v : blk) v *= s;
  }
};

// Accumulates dLoss/dparams for one example into `grads` given the gradient
// at the softmax logits.
inline void backward_one(const Model& m, const ForwardCache& cc,
                         std::span<const double> dlogits, ModelGrads& grads) {
  std::vector<double> d(dlogits.begin(), dlogits.end());
  for (std::size_t i = m.fc.size(); i-- > 0;) {
    std::vector<double> x;
    if (i > 0) {
      x = cc.fc_pre[i - 1];
      relu_inplace(x);
    } else {
      x = m.cfg.kind == ModelKind::ffn ? cc.ffn_input : cc.flat;
    }
    d = dense_backward(x, m.fc[i], d, grads.fc[i]);
    if (i > 0) relu_backward_inplace(cc.fc_pre[i - 1], d);
  }
  if (m.cfg.kind == ModelKind::ffn) return;

  Tensor2 dpool(cc.pooled.rows(), cc.pooled.cols());
  std::copy(d.begin(), d.end(), dpool.data().begin());
  Tensor2 dact = maxpool1d_backward(dpool, cc.pool_argmax, cc.second_pre.rows());
  relu_backward_inplace(cc.second_pre, dact);
  Tensor2 dconcat = conv1d_backward(cc.concat, m.second, Padding::same, dact, grads.second);

  const int t_len = static_cast<int>(cc.concat.rows());
  int ch_off = 0;
  for (std::size_t bi = 0; bi < m.branches.size(); ++bi) {
    const auto& b = m.branches[bi];
    const auto& pre = cc.branch_pre[bi];
    const int crop = cc.branch_crop[bi];
    Tensor2 dpre(pre.rows(), pre.cols());
    for (int t = 0; t < t_len; ++t)
      for (int co = 0; co < b.out_ch; ++co)
        if (pre(t + crop, co) > 0.0) dpre(t + crop, co) = dconcat(t, ch_off + co);
    conv1d_backward(cc.input, b, m.cfg.crop_to_min ? Padding::valid : Padding::same, dpre,
                    grads.branches[bi]);
    ch_off += b.out_ch;
  }
}

// Forward + fused softmax/NLL backward over a batch. Returns the summed
// weighted NLL; gradients are accumulated in fixed batch order.
inline double model_backward(const Model& m, const std::vector<WindowedExample>& batch,
                             const ClassWeights& cw, ModelGrads& grads,
                             std::size_t* clamp_count = nullptr) {
  const double norm = 1.0 / (cw.theta0 + cw.theta1);
  double loss = 0.0;
  for (const auto& ex : batch) {
    ForwardCache cc;
    const auto probs = m.forward_one(ex.window, &cc);
    double p = probs[static_cast<std::size_t>(ex.label)];
    if (p < 1e-12) {
      p = 1e-12;
      if (clamp_count) ++*clamp_count;
    }
    const double scale = norm * cw.theta(ex.label);
    loss += scale * -std::log(p);
    std::vector<double> dlogits(2);
    for (int k = 0; k < 2; ++k)
      dlogits[static_cast<std::size_t>(k)] = scale * (probs[static_cast<std::size_t>(k)] - (k == ex.label ? 1.0 : 0.0));
    backward_one(m, cc, dlogits, grads);
  }
  return loss;
}

// Max relative error between analytic and central finite-difference gradients
// of the summed weighted NLL over `batch`.
inline double grad_check_model(Model& m, const std::vector<WindowedExample>& batch,
                               const ClassWeights& cw, double h = 1e-5,
                               std::size_t max_checked = 400, std::uint64_t seed = 0) {
  ModelGrads grads(m);
  model_backward(m, batch, cw, grads);
  std::vector<double> flat_g;
  for (auto blk : grads.param_blocks()) flat_g.insert(flat_g.end(), blk.begin(), blk.end());
  std::vector<double> flat_p = m.flat_params();
  auto loss_fn = [&]() {
    std::vector<std::uint8_t> labels;
    Tensor2 probs(batch.size(), 2);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto p = m.forward_one(batch[i].window);
      probs(i, 0) = p[0];
      probs(i, 1) = p[1];
      labels.push_back(static_cast<std::uint8_t>(batch[i].label));
    }
    return weighted_nll(probs, labels, cw);
  };
  // grad_check perturbs the flat copy; push it into the model on every eval.
  auto wrapped = [&]() {
    m.set_flat_params(flat_p);
    return loss_fn();
  };
  const double err = grad_check(flat_p, flat_g, wrapped, h, max_checked, seed);
  m.set_flat_params(flat_p);
  return err;
}

}  // namespace abd
