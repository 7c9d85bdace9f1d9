#include "esd/mlp.hpp"

#include <cstring>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <stdexcept>

#include "esd/rng.hpp"

namespace esd {

namespace {

constexpr char kMagic[8] = {'E', 'S', 'D', 'N', 'E', 'T', '1', '\n'};

void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
         (std::uint32_t(b[3]) << 24);
}

}  // namespace

Eigen::Index MlpModel::parameter_count() const {
  Eigen::Index n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l)
    n += weights[l].size() + biases[l].size();
  return n;
}

void MlpModel::validate() const {
  if (layer_sizes.size() < 2) throw std::invalid_argument("MlpModel: need >= 2 layers");
  if (weights.size() + 1 != layer_sizes.size() || biases.size() != weights.size())
    throw std::invalid_argument("MlpModel: parameter count mismatch");
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (weights[l].rows() != layer_sizes[l + 1] || weights[l].cols() != layer_sizes[l] ||
        biases[l].size() != layer_sizes[l + 1])
      throw std::invalid_argument("MlpModel: layer " + std::to_string(l) + " shape mismatch");
    if (!weights[l].allFinite() || !biases[l].allFinite())
      throw std::invalid_argument("MlpModel: non-finite parameters");
  }
}

MlpModel init_mlp(const std::vector<Eigen::Index>& layer_sizes, std::uint64_t seed) {
  if (layer_sizes.size() < 2) throw std::invalid_argument("init_mlp: need >= 2 layers");
  MlpModel model;
  model.layer_sizes = layer_sizes;
  CounterRng rng(seed, /*stream=*/0x6d6c70);  // "mlp"
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    const Eigen::Index fan_in = layer_sizes[l];
    const Eigen::Index fan_out = layer_sizes[l + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Eigen::MatrixXd w(fan_out, fan_in);
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j)
        w(i, j) = bound * (2.0 * rng.next_double() - 1.0);
    model.weights.push_back(std::move(w));
    model.biases.push_back(Eigen::VectorXd::Zero(fan_out));
  }
  return model;
}

Eigen::MatrixXd mlp_forward_batch(const MlpModel& model, const Eigen::MatrixXd& inputs) {
  if (inputs.cols() != model.input_dim())
    throw std::invalid_argument("mlp_forward: input dimension mismatch");
  Eigen::MatrixXd a = inputs;
  for (Eigen::Index l = 0; l < model.layer_count(); ++l) {
    const auto& w = model.weights[static_cast<std::size_t>(l)];
    const auto& b = model.biases[static_cast<std::size_t>(l)];
    Eigen::MatrixXd z = a * w.transpose();
    z.rowwise() += b.transpose();
    if (l + 1 < model.layer_count())
      a = z.array().tanh().matrix();
    else
      a = std::move(z);
  }
  return a;
}

Eigen::VectorXd mlp_forward(const MlpModel& model, const Eigen::VectorXd& y,
                            const Eigen::VectorXd& z) {
  Eigen::MatrixXd input(1, y.size() + z.size());
  input.leftCols(y.size()) = y.transpose();
  input.rightCols(z.size()) = z.transpose();
  return mlp_forward_batch(model, input).row(0).transpose();
}

std::pair<double, MlpGradients> loss_and_grad(const MlpModel& model,
                                              const Eigen::MatrixXd& inputs,
                                              const Eigen::MatrixXd& targets) {
  model.validate();
  const Eigen::Index batch = inputs.rows();
  if (batch < 1) throw std::invalid_argument("loss_and_grad: empty batch");
  if (inputs.cols() != model.input_dim() || targets.cols() != model.output_dim() ||
      targets.rows() != batch)
    throw std::invalid_argument("loss_and_grad: shape mismatch");

  const Eigen::Index layers = model.layer_count();
  std::vector<Eigen::MatrixXd> acts(static_cast<std::size_t>(layers) + 1);
  acts[0] = inputs;
  for (Eigen::Index l = 0; l < layers; ++l) {
    Eigen::MatrixXd z = acts[static_cast<std::size_t>(l)] *
                        model.weights[static_cast<std::size_t>(l)].transpose();
    z.rowwise() += model.biases[static_cast<std::size_t>(l)].transpose();
    acts[static_cast<std::size_t>(l) + 1] =
        (l + 1 < layers) ? z.array().tanh().matrix().eval() : std::move(z);
  }

  const Eigen::MatrixXd resid = acts.back() - targets;
  const double loss = resid.squaredNorm() / static_cast<double>(batch);

  MlpGradients grads;
  grads.weights.resize(static_cast<std::size_t>(layers));
  grads.biases.resize(static_cast<std::size_t>(layers));
  Eigen::MatrixXd delta = (2.0 / static_cast<double>(batch)) * resid;
  for (Eigen::Index l = layers - 1; l >= 0; --l) {
    const auto li = static_cast<std::size_t>(l);
    if (l + 1 < layers) {
      // tanh' = 1 - tanh^2; acts already holds the activations
      delta = delta.array() * (1.0 - acts[li + 1].array().square());
    }
    grads.weights[li].noalias() = delta.transpose() * acts[li];
    grads.biases[li] = delta.colwise().sum().transpose();
    if (l > 0) delta = delta * model.weights[li];
  }
  return {loss, std::move(grads)};
}

AdamState AdamState::create(const MlpModel& model, double lr) {
  AdamState s;
  s.lr = lr;
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    s.m_weights.push_back(Eigen::MatrixXd::Zero(model.weights[l].rows(), model.weights[l].cols()));
    s.v_weights.push_back(Eigen::MatrixXd::Zero(model.weights[l].rows(), model.weights[l].cols()));
    s.m_biases.push_back(Eigen::VectorXd::Zero(model.biases[l].size()));
    s.v_biases.push_back(Eigen::VectorXd::Zero(model.biases[l].size()));
  }
  return s;
}

void adam_step(AdamState& state, MlpModel& model, const MlpGradients& grads) {
  if (grads.weights.size() != model.weights.size())
    throw std::invalid_argument("adam_step: gradient shape mismatch");
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
      m = state.beta1 * m + (1.0 - state.beta1) * g;
      v = (state.beta2 * v.array() + (1.0 - state.beta2) * g.array().square()).matrix();
      param -= (state.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + state.eps)).matrix();
    };
    update(model.weights[l], state.m_weights[l], state.v_weights[l], grads.weights[l]);
    update(model.biases[l], state.m_biases[l], state.v_biases[l], grads.biases[l]);
  }
}

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
  if (batch_size < 0) throw std::invalid_argument("TrainConfig: batch_size must be >= 0");
  if (!(lr > 0.0)) throw std::invalid_argument("TrainConfig: lr must be positive");
  for (const Eigen::Index h : hidden)
    if (h < 1) throw std::invalid_argument("TrainConfig: hidden sizes must be >= 1");
}

TrainResult train_amortized(const LabeledDataset& data, const TrainConfig& cfg) {
  cfg.validate();
  data.validate();
  const Eigen::Index j_count = data.size();
  const Eigen::Index d_v = data.y.cols();
  const Eigen::Index d_x = data.z.cols();

  Eigen::MatrixXd inputs(j_count, d_v + d_x);
  inputs.leftCols(d_v) = data.y;
  inputs.rightCols(d_x) = data.z;

  std::vector<Eigen::Index> sizes;
  sizes.push_back(d_v + d_x);
  sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  sizes.push_back(data.u.cols());

  TrainResult result;
  result.model = init_mlp(sizes, cfg.seed);
  AdamState adam = AdamState::create(result.model, cfg.lr);
  result.loss_history.reserve(static_cast<std::size_t>(cfg.epochs));

  const Eigen::Index batch = cfg.batch_size == 0 ? j_count : cfg.batch_size;
  std::vector<Eigen::Index> order(static_cast<std::size_t>(j_count));
  std::iota(order.begin(), order.end(), Eigen::Index{0});

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_loss = 0.0;
    Eigen::Index seen = 0;
    if (batch >= j_count) {
      auto [loss, grads] = loss_and_grad(result.model, inputs, data.u);
      adam_step(adam, result.model, grads);
      epoch_loss = loss;
      seen = j_count;
    } else {
      CounterRng rng(derive_seed(cfg.seed, "shuffle"), static_cast<std::uint64_t>(epoch));
      for (Eigen::Index i = j_count - 1; i > 0; --i)
        std::swap(order[static_cast<std::size_t>(i)],
                  order[static_cast<std::size_t>(
                      rng.next_below(static_cast<std::uint64_t>(i + 1)))]);
      for (Eigen::Index start = 0; start < j_count; start += batch) {
        const Eigen::Index b = std::min(batch, j_count - start);
        Eigen::MatrixXd bx(b, inputs.cols()), bt(b, data.u.cols());
        for (Eigen::Index r = 0; r < b; ++r) {
          bx.row(r) = inputs.row(order[static_cast<std::size_t>(start + r)]);
          bt.row(r) = data.u.row(order[static_cast<std::size_t>(start + r)]);
        }
        auto [loss, grads] = loss_and_grad(result.model, bx, bt);
        adam_step(adam, result.model, grads);
        epoch_loss += loss * static_cast<double>(b);
        seen += b;
      }
      epoch_loss /= static_cast<double>(seen);
    }
    if (!std::isfinite(epoch_loss))
      throw std::runtime_error("train_amortized: loss diverged at epoch " +
                               std::to_string(epoch));
    result.loss_history.push_back(epoch_loss);
  }
  return result;
}

Eigen::MatrixXd mlp_sample(const MlpModel& model, const Eigen::VectorXd& y, Eigen::Index n,
                           std::uint64_t seed) {
  const Eigen::Index d_x = model.input_dim() - y.size();
  if (d_x < 1) throw std::invalid_argument("mlp_sample: y longer than model input");
  Eigen::MatrixXd inputs(n, model.input_dim());
  for (Eigen::Index i = 0; i < n; ++i) {
    CounterRng rng(seed, static_cast<std::uint64_t>(i));
    inputs.row(i).head(y.size()) = y.transpose();
    inputs.row(i).tail(d_x) = rng.gaussian_vector(d_x).transpose();
  }
  return mlp_forward_batch(model, inputs);
}

void save_mlp(const MlpModel& model, const std::filesystem::path& path, std::uint64_t seed,
              const std::string& normalization_ref) {
  model.validate();
  nlohmann::json header{{"layer_sizes", model.layer_sizes},
                        {"activation", "tanh"},
                        {"seed", seed}};
  if (!normalization_ref.empty()) header["normalization"] = normalization_ref;
  const std::string header_str = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kMagic, sizeof(kMagic));
  write_u32(out, static_cast<std::uint32_t>(header_str.size()));
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    const Eigen::MatrixXd& w = model.weights[l];
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) {
        const double v = w(i, j);
        out.write(reinterpret_cast<const char*>(&v), sizeof(double));
      }
    out.write(reinterpret_cast<const char*>(model.biases[l].data()),
              static_cast<std::streamsize>(model.biases[l].size() * sizeof(double)));
  }
}

MlpModel load_mlp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(magic)) != 0)
    throw std::runtime_error(path.string() + ": bad checkpoint magic");
  const std::uint32_t header_len = read_u32(in);
  std::string header_str(header_len, '\0');
  in.read(header_str.data(), header_len);
  const nlohmann::json header = nlohmann::json::parse(header_str);
  if (header.value("activation", "") != std::string("tanh"))
    throw std::runtime_error(path.string() + ": unsupported activation");

  MlpModel model;
  model.layer_sizes = header.at("layer_sizes").get<std::vector<Eigen::Index>>();
  for (std::size_t l = 0; l + 1 < model.layer_sizes.size(); ++l) {
    Eigen::MatrixXd w(model.layer_sizes[l + 1], model.layer_sizes[l]);
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) {
        double v;
        in.read(reinterpret_cast<char*>(&v), sizeof(double));
        w(i, j) = v;
      }
    Eigen::VectorXd b(model.layer_sizes[l + 1]);
    in.read(reinterpret_cast<char*>(b.data()),
            static_cast<std::streamsize>(b.size() * sizeof(double)));
    if (!in) throw std::runtime_error(path.string() + ": truncated parameter blob");
    model.weights.push_back(std::move(w));
    model.biases.push_back(std::move(b));
  }
  model.validate();
  return model;
}

void save_loss_history(const std::vector<double>& history, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "epoch,loss\n";
  for (std::size_t i = 0; i < history.size(); ++i) out << i << ',' << history[i] << '\n';
}

}  // namespace esd
