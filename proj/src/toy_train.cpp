#include <cmath>
#include <numeric>

#include "xtransfer/encoders.hpp"
#include "xtransfer/errors.hpp"
#include "xtransfer/optim.hpp"
#include "xtransfer/rng.hpp"

namespace xtransfer {

using nlohmann::json;

ad::Var clip_contrastive_loss(ad::Var image_emb, ad::Var text_emb, ad::Var inv_temperature) {
  if (image_emb.shape() != text_emb.shape()) {
    throw ValidationError("contrastive loss: image and text batches differ in shape");
  }
  return ad::symmetric_cross_entropy(ad::mul_scalar(ad::matmul_nt(image_emb, text_emb), inv_temperature));
}

double clip_contrastive_loss(const EmbeddingBatch& image_emb, const EmbeddingBatch& text_emb, double temperature) {
  if (!(temperature > 0.0)) throw ValidationError("temperature must be > 0");
  if (image_emb.vectors.shape() != text_emb.vectors.shape()) {
    throw ValidationError("contrastive loss: batch size or dimension mismatch");
  }
  ad::Tape t;
  return clip_contrastive_loss(t.constant(image_emb.vectors), t.constant(text_emb.vectors),
                               t.constant(Tensor({1}, 1.0 / temperature)))
      .value()[0];
}

void ToyTrainConfig::validate() const {
  if (!(temperature > 0.0)) throw ValidationError("temperature must be > 0", "/temperature");
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1", "/batch_size");
  if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be > 0", "/learning_rate");
  if (architecture.conv_widths.empty()) throw ValidationError("need at least one conv layer", "/architecture");
  if (architecture.resolution != dataset.resolution) {
    throw ValidationError("architecture resolution must equal dataset resolution", "/architecture/resolution");
  }
}

void to_json(json& j, const ToyTrainConfig& c) {
  j = json{{"temperature", c.temperature},
           {"trainable_temperature", c.trainable_temperature},
           {"batch_size", c.batch_size},
           {"epochs", c.epochs},
           {"learning_rate", c.learning_rate},
           {"dataset",
            {{"num_classes", c.dataset.num_classes},
             {"images_per_class", c.dataset.images_per_class},
             {"resolution", c.dataset.resolution},
             {"seed", c.dataset.seed},
             {"contrast", c.dataset.contrast}}},
           {"architecture",
            {{"conv_widths", c.architecture.conv_widths},
             {"kernel", c.architecture.kernel},
             {"embed_dim", c.architecture.embed_dim},
             {"token_dim", c.architecture.token_dim},
             {"text_hidden", c.architecture.text_hidden},
             {"oov_buckets", c.architecture.oov_buckets}}}};
}

void from_json(const json& j, ToyTrainConfig& c) {
  ToyTrainConfig d;
  c.temperature = j.value("temperature", d.temperature);
  c.trainable_temperature = j.value("trainable_temperature", d.trainable_temperature);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.epochs = j.value("epochs", d.epochs);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  if (j.contains("dataset")) {
    const auto& ds = j.at("dataset");
    c.dataset.num_classes = ds.value("num_classes", d.dataset.num_classes);
    c.dataset.images_per_class = ds.value("images_per_class", d.dataset.images_per_class);
    c.dataset.resolution = ds.value("resolution", d.dataset.resolution);
    c.dataset.seed = ds.value("seed", d.dataset.seed);
    c.dataset.contrast = ds.value("contrast", d.dataset.contrast);
  }
  c.architecture.resolution = c.dataset.resolution;
  if (j.contains("architecture")) {
    const auto& a = j.at("architecture");
    c.architecture.conv_widths = a.value("conv_widths", d.architecture.conv_widths);
    c.architecture.kernel = a.value("kernel", d.architecture.kernel);
    c.architecture.embed_dim = a.value("embed_dim", d.architecture.embed_dim);
    c.architecture.token_dim = a.value("token_dim", d.architecture.token_dim);
    c.architecture.text_hidden = a.value("text_hidden", d.architecture.text_hidden);
    c.architecture.oov_buckets = a.value("oov_buckets", d.architecture.oov_buckets);
  }
}

double dataset_contrastive_loss(const ToyDualEncoder& encoder, const ShapesDataset& data, std::size_t batch_size) {
  double total = 0.0;
  for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
    const std::size_t end = std::min(data.size(), begin + batch_size);
    std::vector<std::size_t> idx(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    std::vector<std::string> caps(data.captions.begin() + static_cast<std::ptrdiff_t>(begin),
                                  data.captions.begin() + static_cast<std::ptrdiff_t>(end));
    const EmbeddingBatch zi = encode_image(encoder, data.batch(idx));
    const EmbeddingBatch zt = encoder.encode_text(caps);
    total += clip_contrastive_loss(zi, zt, encoder.temperature()) * static_cast<double>(end - begin);
  }
  return total / static_cast<double>(data.size());
}

ToyTrainResult train_toy_encoder(const ToyTrainConfig& config, std::uint64_t seed, EncoderRegistry* registry,
                                 std::string id) {
  config.validate();
  const ShapesDataset data = generate_shapes(config.dataset);
  if (id.empty()) id = "toy-" + std::to_string(seed);
  EncoderHandle handle;
  handle.id = id;
  handle.architecture_tag = config.architecture.tag();
  handle.pretraining_tag = "shapes-c" + std::to_string(config.dataset.num_classes) + "-n" +
                           std::to_string(config.dataset.images_per_class) + "-s" +
                           std::to_string(config.dataset.seed);
  handle.backend_locator = "memory:" + id;
  handle.input_resolution = {config.architecture.resolution, config.architecture.resolution};
  handle.embed_dim = config.architecture.embed_dim;

  auto encoder = std::make_shared<ToyDualEncoder>(ToyDualEncoder::initialize(
      handle, config.architecture, Tokenizer(toy_vocabulary(), config.architecture.oov_buckets), config.temperature,
      derive_seed(seed, 0)));

  ToyTrainResult result;
  result.initial_loss = dataset_contrastive_loss(*encoder, data, config.batch_size);

  Rng rng(derive_seed(seed, 1));
  Adam opt(config.learning_rate);
  double log_inv_temp = std::log(1.0 / config.temperature);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                   order.begin() + static_cast<std::ptrdiff_t>(end));
      std::vector<std::string> caps;
      caps.reserve(idx.size());
      for (auto i : idx) caps.push_back(data.captions[i]);

      ad::Tape tape;
      auto params = encoder->bind(tape, true);
      ad::Var log_scale = config.trainable_temperature ? tape.parameter(Tensor({1}, log_inv_temp))
                                                       : tape.constant(Tensor({1}, log_inv_temp));
      ad::Var zi = encoder->image_forward(tape, tape.constant(data.batch(idx).pixels()), params);
      ad::Var zt = encoder->text_forward(tape, caps, params);
      ad::Var loss = clip_contrastive_loss(zi, zt, ad::exp(log_scale));
      const double lv = loss.value()[0];
      if (!std::isfinite(lv)) {
        throw NonFiniteLoss("toy training diverged at epoch " + std::to_string(epoch) + " (loss " +
                            std::to_string(lv) + ")");
      }
      tape.backward(loss);

      std::vector<Tensor*> ps;
      std::vector<Tensor> gs;
      for (auto& [name, t] : encoder->mutable_params()) {
        ps.push_back(&t);
        gs.push_back(params.at(name).grad());
      }
      Tensor lit({1}, log_inv_temp);
      if (config.trainable_temperature) {
        ps.push_back(&lit);
        gs.push_back(log_scale.grad());
      }
      opt.step(ps, gs);
      if (config.trainable_temperature) {
        log_inv_temp = lit[0];
        encoder->set_temperature(std::exp(-log_inv_temp));
      }
      epoch_loss += lv * static_cast<double>(idx.size());
    }
    result.epoch_losses.push_back(epoch_loss / static_cast<double>(order.size()));
  }

  result.final_loss = dataset_contrastive_loss(*encoder, data, config.batch_size);
  if (!std::isfinite(result.final_loss)) throw NonFiniteLoss("toy training produced a non-finite loss");
  result.handle = encoder->handle();
  result.encoder = encoder;
  if (registry) registry->add(encoder);
  return result;
}

}  // namespace xtransfer
