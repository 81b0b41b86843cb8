#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xtransfer/autodiff.hpp"
#include "xtransfer/core.hpp"

namespace xtransfer {

struct EncoderHandle {
  std::string id;
  std::string architecture_tag;
  std::string pretraining_tag;
  // "toy:<weights path>", "memory:<key>" or "openclip:<model>/<pretrained>".
  std::string backend_locator;
  Resolution input_resolution;
  std::size_t embed_dim = 0;

  void validate() const;
  friend bool operator==(const EncoderHandle&, const EncoderHandle&) = default;
};

struct SearchSpace {
  std::string name;
  std::vector<EncoderHandle> handles;

  std::size_t size() const { return handles.size(); }
  std::vector<std::string> ids() const;
  // Checks N >= 1, unique ids, and each handle.
  void validate() const;
  // SHA-256 over the canonical JSON encoding; arm order matters.
  std::string digest() const;
};

void to_json(nlohmann::json& j, const EncoderHandle& h);
void from_json(const nlohmann::json& j, EncoderHandle& h);
void to_json(nlohmann::json& j, const SearchSpace& s);
void from_json(const nlohmann::json& j, SearchSpace& s);

SearchSpace load_search_space(const std::filesystem::path& path);
void save_search_space(const SearchSpace& space, const std::filesystem::path& path);

// Row-normalized embeddings [B,d].
struct EmbeddingBatch {
  Tensor vectors;
  std::size_t size() const { return vectors.dim(0); }
  std::size_t dim() const { return vectors.dim(1); }
  std::vector<double> row(std::size_t i) const;
};

class Encoder {
 public:
  virtual ~Encoder() = default;
  virtual const EncoderHandle& handle() const = 0;
  // pixels: [B,3,H,W] in [0,1] at the handle's input resolution. Returns
  // unit-norm rows [B,d] recorded on `tape`.
  virtual ad::Var image_forward(ad::Tape& tape, ad::Var pixels) const = 0;
  virtual EmbeddingBatch encode_text(const std::vector<std::string>& texts) const = 0;
};

// Differentiable image encoding; resizes `pixels` to the encoder's input
// resolution when it differs.
ad::Var encode_image(const Encoder& encoder, ad::Tape& tape, ad::Var pixels);
// Inference-mode encoding, processed in chunks of `chunk` images.
EmbeddingBatch encode_image(const Encoder& encoder, const ImageBatch& x, std::size_t chunk = 256);
EmbeddingBatch encode_text(const Encoder& encoder, const std::vector<std::string>& texts);

// Materializes encoders from handles. Concurrent `get` calls are safe;
// materialization is serialized.
class EncoderRegistry {
 public:
  explicit EncoderRegistry(std::filesystem::path base_dir = {}) : base_dir_(std::move(base_dir)) {}

  std::shared_ptr<const Encoder> get(const EncoderHandle& handle);
  // Make an in-memory encoder available under its handle id.
  void add(std::shared_ptr<const Encoder> encoder);
  void set_base_dir(std::filesystem::path dir);

 private:
  std::mutex mutex_;
  std::filesystem::path base_dir_;
  std::map<std::string, std::shared_ptr<const Encoder>> cache_;
};

// --- toy dual encoder ------------------------------------------------------

struct ToyArchitecture {
  std::vector<std::size_t> conv_widths{8, 16, 32};
  std::size_t kernel = 3;
  std::size_t resolution = 32;
  std::size_t embed_dim = 32;
  std::size_t token_dim = 32;
  std::size_t text_hidden = 64;
  std::size_t oov_buckets = 8;

  std::string tag() const;
};

// Lowercased alphanumeric word tokenizer over a fixed vocabulary; unknown
// words hash into `oov_buckets` extra slots.
class Tokenizer {
 public:
  Tokenizer() = default;
  Tokenizer(std::vector<std::string> vocabulary, std::size_t oov_buckets);

  std::vector<std::size_t> encode(const std::string& text) const;
  std::size_t table_size() const { return vocabulary_.size() + oov_buckets_; }
  const std::vector<std::string>& vocabulary() const { return vocabulary_; }
  std::size_t oov_buckets() const { return oov_buckets_; }

 private:
  std::vector<std::string> vocabulary_;
  std::map<std::string, std::size_t> index_;
  std::size_t oov_buckets_ = 0;
};

// Parameter set of a toy dual encoder, keyed by name.
using ToyParams = std::map<std::string, Tensor>;

class ToyDualEncoder final : public Encoder {
 public:
  ToyDualEncoder(EncoderHandle handle, ToyArchitecture arch, Tokenizer tokenizer, ToyParams params,
                 double temperature);

  static ToyDualEncoder initialize(EncoderHandle handle, ToyArchitecture arch, Tokenizer tokenizer,
                                   double temperature, std::uint64_t seed);

  const EncoderHandle& handle() const override { return handle_; }
  ad::Var image_forward(ad::Tape& tape, ad::Var pixels) const override;
  EmbeddingBatch encode_text(const std::vector<std::string>& texts) const override;

  using ParamVars = std::map<std::string, ad::Var>;
  // Forward passes over explicit parameter Vars (used by training).
  ad::Var image_forward(ad::Tape& tape, ad::Var pixels, const ParamVars& params) const;
  ad::Var text_forward(ad::Tape& tape, const std::vector<std::string>& texts, const ParamVars& params) const;
  ParamVars bind(ad::Tape& tape, bool trainable) const;

  const ToyArchitecture& architecture() const { return arch_; }
  const Tokenizer& tokenizer() const { return tokenizer_; }
  const ToyParams& params() const { return params_; }
  ToyParams& mutable_params() { return params_; }
  double temperature() const { return temperature_; }
  void set_temperature(double t) { temperature_ = t; }
  void set_handle(EncoderHandle h) { handle_ = std::move(h); }

  void save(const std::filesystem::path& path) const;
  static ToyDualEncoder load(const std::filesystem::path& path);

 private:
  EncoderHandle handle_;
  ToyArchitecture arch_;
  Tokenizer tokenizer_;
  ToyParams params_;
  double temperature_;
};

// --- synthetic captioned shapes -------------------------------------------

struct ShapesDatasetSpec {
  std::size_t num_classes = 12;
  std::size_t images_per_class = 40;
  std::size_t resolution = 32;
  std::uint64_t seed = 0;
  // Foreground/background separation; 1 renders fully saturated shapes.
  double contrast = 1.0;
};

struct ShapesDataset {
  std::vector<std::string> class_names;  // "{color} {shape}"
  std::vector<Tensor> images;            // [3,H,W] each
  std::vector<std::size_t> labels;
  std::vector<std::string> captions;  // "a photo of a {class}"

  std::size_t size() const { return images.size(); }
  ImageBatch batch(const std::vector<std::size_t>& indices) const;
};

inline constexpr const char* kToyCaptionTemplate = "a photo of a {}";

std::vector<std::string> toy_colors();
std::vector<std::string> toy_shapes();
std::vector<std::string> toy_vocabulary();
ShapesDataset generate_shapes(const ShapesDatasetSpec& spec);

// Symmetric InfoNCE over paired rows with logits sim/temperature.
double clip_contrastive_loss(const EmbeddingBatch& image_emb, const EmbeddingBatch& text_emb, double temperature);
ad::Var clip_contrastive_loss(ad::Var image_emb, ad::Var text_emb, ad::Var inv_temperature);

struct ToyTrainConfig {
  double temperature = 0.07;
  bool trainable_temperature = false;
  std::size_t batch_size = 64;
  std::size_t epochs = 30;
  double learning_rate = 3e-3;
  ShapesDatasetSpec dataset{};
  ToyArchitecture architecture{};

  void validate() const;
};

void to_json(nlohmann::json& j, const ToyTrainConfig& c);
void from_json(const nlohmann::json& j, ToyTrainConfig& c);

struct ToyTrainResult {
  EncoderHandle handle;
  std::shared_ptr<ToyDualEncoder> encoder;
  double initial_loss = 0.0;  // full-dataset loss before any update
  double final_loss = 0.0;    // full-dataset loss after training
  std::vector<double> epoch_losses;
};

// Trains a toy dual encoder on the synthetic shapes set. The handle id is
// "toy-<seed>" unless `id` is given; when `registry` is given the encoder is
// added to it. Throws NonFiniteLoss on divergence.
ToyTrainResult train_toy_encoder(const ToyTrainConfig& config, std::uint64_t seed,
                                 EncoderRegistry* registry = nullptr, std::string id = {});

// Full-dataset contrastive loss of `encoder` on `data`, batched.
double dataset_contrastive_loss(const ToyDualEncoder& encoder, const ShapesDataset& data, std::size_t batch_size);

}  // namespace xtransfer
