#include "vqunet/model.hpp"

#include <cmath>
#include <numeric>

#include "vqunet/checkpoint.hpp"
#include "vqunet/config_io.hpp"
#include "vqunet/ops.hpp"

namespace vqunet {

void VQUNetConfig::validate() const {
  if (depth == 0) throw Error("VQUNetConfig: depth must be at least 1");
  if (input_shape[0] == 0 || input_shape[1] == 0 || input_shape[2] == 0) {
    throw Error("VQUNetConfig: input_shape dims must be positive");
  }
  const std::size_t factor = std::size_t{1} << depth;
  if (input_shape[0] % factor != 0 || input_shape[1] % factor != 0) {
    throw Error("VQUNetConfig: H and W must be divisible by 2^depth = " + std::to_string(factor));
  }
  if (channels.size() != depth) throw Error("VQUNetConfig: channels must list one entry per depth");
  if (codebook_k.size() != depth) throw Error("VQUNetConfig: codebook_k must list one entry per depth");
  if (stem_channels == 0 || std::find(channels.begin(), channels.end(), 0u) != channels.end()) {
    throw Error("VQUNetConfig: channel counts must be positive");
  }
  if (vq_enabled && std::any_of(codebook_k.begin(), codebook_k.end(), [](std::size_t k) { return k < 2; })) {
    throw Error("VQUNetConfig: every codebook needs K >= 2");
  }
  if (!(alpha > 0.0)) throw Error("VQUNetConfig: alpha must be > 0");
  if (!(beta >= 0.0)) throw Error("VQUNetConfig: beta must be >= 0");
  if (!(learning_rate >= 0.0)) throw Error("VQUNetConfig: learning_rate must be >= 0");
  if (batch_size == 0) throw Error("VQUNetConfig: batch_size must be positive");
}

VQUNet::VQUNet(VQUNetConfig config) : config_(std::move(config)) {
  config_.validate();
  Rng rng(config_.seed);
  const std::size_t in_ch = config_.input_shape[2];
  const std::size_t stem = config_.stem_channels;
  const std::size_t depth = config_.depth;

  stem_ = Conv2d("stem", in_ch, stem, 3, 1, rng);
  std::size_t prev = stem;
  for (std::size_t d = 0; d < depth; ++d) {
    const std::size_t ch = config_.channels[d];
    const std::string name = "enc" + std::to_string(d + 1);
    encoders_.push_back({Conv2d(name + ".down", prev, ch, 3, 2, rng), ResidualBlock(name + ".res1", ch, rng),
                         ResidualBlock(name + ".res2", ch, rng)});
    if (config_.vq_enabled) {
      codebooks_.emplace_back(config_.codebook_k[d], ch, static_cast<int>(d + 1), rng.next());
    }
    prev = ch;
  }
  const std::size_t deepest = config_.channels.back();
  bottleneck_conv_ = Conv2d("bottleneck.conv", deepest, deepest, 3, 1, rng);
  bottleneck_res1_ = ResidualBlock("bottleneck.res1", deepest, rng);
  bottleneck_res2_ = ResidualBlock("bottleneck.res2", deepest, rng);
  decoders_.resize(depth);
  for (std::size_t d = depth; d >= 1; --d) {
    const std::size_t from = config_.channels[d - 1];
    const std::size_t to = d >= 2 ? config_.channels[d - 2] : stem;
    const std::size_t refine_in = d >= 2 ? 2 * to : to;
    const std::string name = "dec" + std::to_string(d);
    decoders_[d - 1] = {ConvTranspose2d(name + ".up", from, to, 3, 2, rng),
                        Conv2d(name + ".refine", refine_in, to, 3, 1, rng)};
  }
  output_ = Conv2d("output", stem, in_ch, 3, 1, rng);
}

std::vector<Parameter*> VQUNet::parameters() {
  std::vector<Parameter*> out;
  stem_.collect(out);
  for (std::size_t d = 0; d < encoders_.size(); ++d) {
    encoders_[d].down.collect(out);
    encoders_[d].res1.collect(out);
    encoders_[d].res2.collect(out);
    if (config_.vq_enabled) out.push_back(&codebooks_[d].parameter());
  }
  bottleneck_conv_.collect(out);
  bottleneck_res1_.collect(out);
  bottleneck_res2_.collect(out);
  for (std::size_t d = decoders_.size(); d >= 1; --d) {
    decoders_[d - 1].up.collect(out);
    decoders_[d - 1].refine.collect(out);
  }
  output_.collect(out);
  return out;
}

std::vector<const Parameter*> VQUNet::parameters() const {
  auto mutable_params = const_cast<VQUNet*>(this)->parameters();
  return {mutable_params.begin(), mutable_params.end()};
}

ForwardResult VQUNet::forward(const Tensor& x) const {
  const auto& s = config_.input_shape;
  if (x.rank() != 4 || x.dim(1) != s[0] || x.dim(2) != s[1] || x.dim(3) != s[2]) {
    throw ShapeError("VQUNet::forward: input " + shape_string(x.shape()) + " does not match configured [N," +
                     std::to_string(s[0]) + "," + std::to_string(s[1]) + "," + std::to_string(s[2]) + "]");
  }
  ForwardResult out;
  Tensor h = relu(stem_(x));
  for (std::size_t d = 0; d < encoders_.size(); ++d) {
    const auto& enc = encoders_[d];
    Tensor a = enc.res2(enc.res1(relu(enc.down(h))));
    if (config_.vq_enabled) {
      out.per_depth.push_back(quantize(a, codebooks_[d]));
    } else {
      QuantizationResult passthrough;
      passthrough.a = a;
      passthrough.q_star = a;
      passthrough.loss_e = Tensor::scalar(0.0);
      passthrough.loss_q = Tensor::scalar(0.0);
      out.per_depth.push_back(std::move(passthrough));
    }
    h = out.per_depth.back().q_star;
  }
  h = bottleneck_res2_(bottleneck_res1_(relu(bottleneck_conv_(h))));
  out.bottleneck_shape = h.shape();
  for (std::size_t d = decoders_.size(); d >= 1; --d) {
    const auto& dec = decoders_[d - 1];
    Tensor up = relu(dec.up(h));
    if (d >= 2) up = concat_channels(up, out.per_depth[d - 2].q_star);
    h = relu(dec.refine(up));
  }
  out.reconstruction = clip(output_(h), 0.0, 1.0);
  return out;
}

LossBreakdown compute_loss(const ForwardResult& fwd, const Tensor& x, const VQUNetConfig& config) {
  Tensor l_reconst = mse(x, fwd.reconstruction);
  Tensor l_e = Tensor::scalar(0.0);
  Tensor l_q = Tensor::scalar(0.0);
  if (config.vq_enabled) {
    l_e = fwd.per_depth.front().loss_e;
    l_q = fwd.per_depth.front().loss_q;
    for (std::size_t d = 1; d < fwd.per_depth.size(); ++d) {
      l_e = add(l_e, fwd.per_depth[d].loss_e);
      l_q = add(l_q, fwd.per_depth[d].loss_q);
    }
  }
  LossBreakdown out;
  out.total = add(add(scale(l_reconst, config.alpha), scale(l_e, config.beta)), l_q);
  out.l_reconst = l_reconst.item();
  out.l_e = l_e.item();
  out.l_q = l_q.item();
  out.total_value = out.total.item();
  return out;
}

LossBreakdown compute_loss(const VQUNet& model, const Tensor& x) {
  return compute_loss(model.forward(x), x, model.config());
}

TrainingLog train(VQUNet& model, const Dataset& data) {
  if (data.size() == 0) throw TrainingError("train: dataset is empty");
  data.validate();
  const auto& cfg = model.config();
  auto params = model.parameters();
  Rng rng(derive_seed(cfg.seed, "purifier-batches"));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainingLog log;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    EpochLoss sums;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + begin, end - begin);
      const Tensor x = gather_images(data.images, idx);
      const LossBreakdown loss = compute_loss(model, x);
      const std::pair<const char*, double> terms[] = {
          {"l_reconst", loss.l_reconst}, {"l_e", loss.l_e}, {"l_q", loss.l_q}, {"total", loss.total_value}};
      for (const auto& [name, value] : terms) {
        if (!std::isfinite(value)) {
          throw TrainingError(std::string("non-finite ") + name + " at epoch " + std::to_string(epoch + 1));
        }
      }
      backward(loss.total);
      optimizer_step(params, cfg.learning_rate);
      const double w = static_cast<double>(idx.size());
      sums.l_reconst += w * loss.l_reconst;
      sums.l_e += w * loss.l_e;
      sums.l_q += w * loss.l_q;
      sums.total += w * loss.total_value;
    }
    const double n = static_cast<double>(data.size());
    log.epochs.push_back({sums.l_reconst / n, sums.l_e / n, sums.l_q / n, sums.total / n});
  }
  return log;
}

Tensor purify(const VQUNet& model, const Tensor& x, std::size_t batch_size) {
  NoGradGuard no_grad;
  if (x.rank() != 4) throw ShapeError("purify: expected [N,H,W,C], got " + shape_string(x.shape()));
  const std::size_t n = x.dim(0);
  const std::size_t per = x.size() / std::max<std::size_t>(n, 1);
  std::vector<double> out(x.size());
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < n; begin += batch_size) {
    const std::size_t end = std::min(n, begin + batch_size);
    idx.resize(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    const Tensor recon = model.forward(gather_images(x, idx)).reconstruction;
    std::copy(recon.data().begin(), recon.data().end(), out.begin() + begin * per);
  }
  return Tensor(x.shape(), std::move(out));
}

void save(const VQUNet& model, const std::filesystem::path& path) {
  const auto params = model.parameters();
  write_checkpoint(path, ModelKind::kPurifier, to_json(model.config()).dump(), params);
}

VQUNet load_vqunet(const std::filesystem::path& path, std::optional<bool> expect_vq) {
  const Checkpoint ckpt = read_checkpoint(path);
  if (ckpt.kind != ModelKind::kPurifier) throw CheckpointError(path.string() + ": not a purifier checkpoint");
  VQUNetConfig config;
  try {
    config = vqunet_config_from_json(nlohmann::json::parse(ckpt.config_json));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": unreadable config header: " + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(path.string() + ": invalid config header: " + e.what());
  }
  if (expect_vq && *expect_vq != config.vq_enabled) {
    throw CheckpointError(path.string() + ": checkpoint has vq_enabled=" + (config.vq_enabled ? "true" : "false") +
                          ", expected " + (*expect_vq ? "true" : "false"));
  }
  VQUNet model(config);
  assign_parameters(ckpt, model.parameters());
  return model;
}

}  // namespace vqunet
