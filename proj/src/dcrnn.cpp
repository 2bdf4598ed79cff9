// SPDX-License-Identifier: Apache-2.0
#include "dstyle/dcrnn.hpp"

#include <cmath>
#include <json.hpp>
#include <random>

#include "dstyle/error.hpp"
#include "dstyle/nn/checkpoint.hpp"

namespace dstyle::dcrnn {

namespace {

std::uint64_t site_seed(std::uint64_t seed, std::uint64_t site) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (site + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace

std::string ArchitectureConfig::to_json() const {
  nlohmann::json j = {{"feature_count", feature_count},
                      {"time_len", time_len},
                      {"conv1_filters", conv1_filters},
                      {"conv1_width", conv1_width},
                      {"conv2_filters", conv2_filters},
                      {"conv2_kernel", conv2_kernel},
                      {"pool", pool},
                      {"gru_hidden", gru_hidden},
                      {"fc1_units", fc1_units},
                      {"num_drivers", num_drivers},
                      {"dropout", dropout},
                      {"ablation_no_bn_residual", ablation_no_bn_residual}};
  return j.dump(2) + "\n";
}

ArchitectureConfig ArchitectureConfig::from_json(const std::string& text) {
  try {
    auto j = nlohmann::json::parse(text);
    ArchitectureConfig c;
    c.feature_count = j.at("feature_count").get<std::size_t>();
    c.time_len = j.at("time_len").get<std::size_t>();
    c.conv1_filters = j.at("conv1_filters").get<std::size_t>();
    c.conv1_width = j.at("conv1_width").get<std::size_t>();
    c.conv2_filters = j.at("conv2_filters").get<std::size_t>();
    c.conv2_kernel = j.at("conv2_kernel").get<std::size_t>();
    c.pool = j.at("pool").get<std::size_t>();
    c.gru_hidden = j.at("gru_hidden").get<std::size_t>();
    c.fc1_units = j.at("fc1_units").get<std::size_t>();
    c.num_drivers = j.at("num_drivers").get<std::size_t>();
    c.dropout = j.at("dropout").get<double>();
    c.ablation_no_bn_residual = j.at("ablation_no_bn_residual").get<bool>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad architecture config: ") + e.what());
  }
}

DerivedShapes derive_shapes(const ArchitectureConfig& cfg) {
  if (cfg.feature_count == 0 || cfg.time_len == 0 || cfg.num_drivers == 0) {
    throw ShapeError("feature_count, time_len and num_drivers must be positive");
  }
  if (cfg.conv1_width % 2 == 0 || cfg.conv2_kernel % 2 == 0) {
    throw ShapeError("odd kernel widths are required to preserve the time axis");
  }
  if (cfg.conv1_filters < cfg.pool) {
    throw ShapeError("conv1 produces " + std::to_string(cfg.conv1_filters) +
                     " rows, fewer than the pool window " + std::to_string(cfg.pool));
  }
  DerivedShapes s{};
  s.input_rows = 7 * cfg.feature_count;
  s.pool1_rows = cfg.conv1_filters - cfg.pool + 1;
  if (s.pool1_rows < cfg.pool) {
    throw ShapeError("second pool window " + std::to_string(cfg.pool) + " exceeds feature axis " +
                     std::to_string(s.pool1_rows));
  }
  s.pool2_rows = s.pool1_rows - cfg.pool + 1;
  s.stacked_rows = cfg.conv2_filters * s.pool2_rows;
  s.gru_input = s.stacked_rows + (cfg.ablation_no_bn_residual ? 0 : s.input_rows);
  return s;
}

Dcrnn::Dcrnn(const ArchitectureConfig& cfg, std::uint64_t seed)
    : cfg_(cfg),
      shapes_(derive_shapes(cfg)),
      norm_mean_(&store_.add("input_norm.mean", Tensor({shapes_.input_rows}, 0.0), false)),
      norm_std_(&store_.add("input_norm.std", Tensor({shapes_.input_rows}, 1.0), false)),
      conv1_(store_, "conv1", 1, cfg.conv1_filters, shapes_.input_rows, cfg.conv1_width,
             {0, cfg.conv1_width / 2}),
      pool1_(cfg.pool),
      drop1_(cfg.dropout),
      conv2_(store_, "conv2", 1, cfg.conv2_filters, cfg.conv2_kernel, cfg.conv2_kernel,
             {cfg.conv2_kernel / 2, cfg.conv2_kernel / 2}),
      pool2_(cfg.pool),
      drop2_(cfg.dropout),
      gru1_(store_, "gru1", shapes_.gru_input, cfg.gru_hidden),
      drop3_(cfg.dropout),
      gru2_(store_, "gru2", cfg.gru_hidden, cfg.gru_hidden),
      drop4_(cfg.dropout),
      fc1_(store_, "fc1", cfg.gru_hidden, cfg.fc1_units, nn::Activation::Sigmoid),
      drop5_(cfg.dropout),
      fc2_(store_, "fc2", cfg.fc1_units, cfg.num_drivers, nn::Activation::None) {
  if (!cfg.ablation_no_bn_residual) bn_.emplace(store_, "bn1", cfg.fc1_units);
  // Validate the whole wiring once, at build time.
  Shape s{1, 1, shapes_.input_rows, cfg.time_len};
  s = conv1_.output_shape(s);
  if (s[2] != 1 || s[3] != cfg.time_len) throw ShapeError("conv1 must collapse the feature axis and keep time");
  s = pool1_.output_shape({1, 1, cfg.conv1_filters, cfg.time_len});
  s = conv2_.output_shape(s);
  s = pool2_.output_shape(s);
  if (s[1] * s[2] != shapes_.stacked_rows || s[3] != cfg.time_len) throw ShapeError("conv stack shape mismatch");

  std::mt19937_64 rng(seed);
  conv1_.init_he_uniform(rng);
  conv2_.init_he_uniform(rng);
  gru1_.init_uniform(rng);
  gru2_.init_uniform(rng);
  fc1_.init_uniform(rng);
  fc2_.init_uniform(rng);
}

void Dcrnn::set_input_normalization(const std::vector<double>& mean, const std::vector<double>& stddev) {
  if (mean.size() != shapes_.input_rows || stddev.size() != shapes_.input_rows) {
    throw ShapeError("normalisation vectors must have " + std::to_string(shapes_.input_rows) + " entries");
  }
  for (std::size_t i = 0; i < mean.size(); ++i) {
    if (!(stddev[i] > 0.0) || !std::isfinite(mean[i])) throw NumericError("invalid input normalisation");
    norm_mean_->value[i] = mean[i];
    norm_std_->value[i] = stddev[i];
  }
}

ForwardTrace Dcrnn::forward(const Tensor& batch, Mode mode, std::uint64_t seed) {
  const std::size_t rows = shapes_.input_rows, t_len = cfg_.time_len;
  if (batch.rank() != 3 || batch.dim(1) != rows || batch.dim(2) != t_len) {
    throw ShapeError("model expects [N," + std::to_string(rows) + "," + std::to_string(t_len) +
                     "], got " + nn::to_string(batch.shape()));
  }
  const std::size_t n = batch.dim(0);
  if (n == 0) throw ShapeError("empty batch");
  ForwardTrace tr;
  tr.shapes.emplace_back("input", batch.shape());

  Tensor x({n, 1, rows, t_len});
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t t = 0; t < t_len; ++t) {
        const std::size_t i = (s * rows + r) * t_len + t;
        x[i] = (batch[i] - norm_mean_->value[r]) / norm_std_->value[r];
      }

  Tensor a = relu1_.forward(conv1_.forward(x));
  tr.shapes.emplace_back("conv1", a.shape());
  a = a.reshaped({n, 1, cfg_.conv1_filters, t_len});
  a = drop1_.forward(pool1_.forward(a), mode, site_seed(seed, 1));
  tr.shapes.emplace_back("pool1", a.shape());
  a = relu2_.forward(conv2_.forward(a));
  tr.shapes.emplace_back("conv2", a.shape());
  // pool2 rows become the recurrent input, so their dropout mask is held
  // fixed over time (as is the mask between the two GRU layers).
  a = drop2_.forward_shared(pool2_.forward(a), 3, mode, site_seed(seed, 2));
  tr.shapes.emplace_back("pool2", a.shape());
  const std::size_t stacked = shapes_.stacked_rows, g_in = shapes_.gru_input;
  tr.shapes.emplace_back("stacked", Shape{n, stacked, t_len});

  // Feature-major [N, G, T] -> time-major [N, T, G] for the recurrent stack.
  Tensor seq({n, t_len, g_in});
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t r = 0; r < stacked; ++r)
      for (std::size_t t = 0; t < t_len; ++t)
        seq[(s * t_len + t) * g_in + r] = a[(s * stacked + r) * t_len + t];
    if (!cfg_.ablation_no_bn_residual)
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t t = 0; t < t_len; ++t)
          seq[(s * t_len + t) * g_in + stacked + r] = x[(s * rows + r) * t_len + t];
  }
  tr.shapes.emplace_back("gru_input", Shape{n, g_in, t_len});

  Tensor h = drop3_.forward_shared(gru1_.forward(seq), 1, mode, site_seed(seed, 3));
  h = gru2_.forward(h);
  tr.shapes.emplace_back("gru2", h.shape());
  Tensor last({n, cfg_.gru_hidden});
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t k = 0; k < cfg_.gru_hidden; ++k)
      last[s * cfg_.gru_hidden + k] = h[(s * t_len + t_len - 1) * cfg_.gru_hidden + k];
  last = drop4_.forward(last, mode, site_seed(seed, 4));

  tr.latent = fc1_.forward(last);
  Tensor f = tr.latent;
  if (bn_) f = bn_->forward(f, mode);
  f = drop5_.forward(f, mode, site_seed(seed, 5));
  tr.logits = fc2_.forward(f);
  tr.logits.require_finite("logits");
  tr.shapes.emplace_back("logits", tr.logits.shape());

  if (mode == Mode::Train) {
    last_logits_ = tr.logits;
    last_n_ = n;
  } else {
    last_logits_.reset();
  }
  return tr;
}

double Dcrnn::backward(const std::vector<std::size_t>& labels) {
  if (!last_logits_) throw ShapeError("backward called without a preceding train-mode forward");
  const auto ce = nn::softmax_cross_entropy(*last_logits_, labels);
  const std::size_t n = last_n_, t_len = cfg_.time_len, hid = cfg_.gru_hidden;

  Tensor g = fc2_.backward(ce.grad);
  g = drop5_.backward(g);
  if (bn_) g = bn_->backward(g);
  g = fc1_.backward(g);
  g = drop4_.backward(g);

  Tensor gh({n, t_len, hid});
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t k = 0; k < hid; ++k) gh[(s * t_len + t_len - 1) * hid + k] = g[s * hid + k];
  gh = gru2_.backward(gh);
  gh = drop3_.backward(gh);
  Tensor gseq = gru1_.backward(gh);

  // Only the convolutional branch carries parameters; the residual slice of
  // the gradient ends at the (frozen) input.
  const std::size_t stacked = shapes_.stacked_rows, g_in = shapes_.gru_input;
  Tensor ga({n, cfg_.conv2_filters, shapes_.pool2_rows, t_len});
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t r = 0; r < stacked; ++r)
      for (std::size_t t = 0; t < t_len; ++t)
        ga[(s * stacked + r) * t_len + t] = gseq[(s * t_len + t) * g_in + r];
  ga = pool2_.backward(drop2_.backward(ga));
  ga = conv2_.backward(relu2_.backward(ga));
  ga = pool1_.backward(drop1_.backward(ga));
  ga = ga.reshaped({n, cfg_.conv1_filters, 1, t_len});
  conv1_.backward(relu1_.backward(ga));

  last_logits_.reset();
  return ce.loss;
}

void Dcrnn::set_batch_norm_statistics(const std::vector<double>& mean, const std::vector<double>& var) {
  if (bn_) bn_->set_running_statistics(mean, var);
}

void Dcrnn::save(std::ostream& out) const { nn::save_checkpoint(out, store_); }

void Dcrnn::load(std::istream& in) { nn::load_checkpoint(in, store_); }

}  // namespace dstyle::dcrnn
