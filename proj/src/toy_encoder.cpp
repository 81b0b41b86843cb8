#include <cctype>
#include <cmath>
#include <sstream>

#include "xtransfer/container.hpp"
#include "xtransfer/encoders.hpp"
#include "xtransfer/errors.hpp"
#include "xtransfer/rng.hpp"

namespace xtransfer {

using nlohmann::json;

std::string ToyArchitecture::tag() const {
  std::ostringstream os;
  os << "toycnn-w";
  for (std::size_t i = 0; i < conv_widths.size(); ++i) os << (i ? "x" : "") << conv_widths[i];
  os << "-k" << kernel << "-r" << resolution << "-d" << embed_dim;
  return os.str();
}

namespace {

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::string cur;
  for (unsigned char ch : text) {
    if (std::isalnum(ch)) {
      cur.push_back(static_cast<char>(std::tolower(ch)));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::size_t conv_out(std::size_t in, std::size_t k) { return (in + 2 * (k / 2) - k) / 2 + 1; }

json architecture_to_json(const ToyArchitecture& a) {
  return json{{"conv_widths", a.conv_widths}, {"kernel", a.kernel},       {"resolution", a.resolution},
           {"embed_dim", a.embed_dim},     {"token_dim", a.token_dim}, {"text_hidden", a.text_hidden},
           {"oov_buckets", a.oov_buckets}};
}

ToyArchitecture architecture_from_json(const json& j) {
  ToyArchitecture a;
  a.conv_widths = j.at("conv_widths").get<std::vector<std::size_t>>();
  a.kernel = j.at("kernel").get<std::size_t>();
  a.resolution = j.at("resolution").get<std::size_t>();
  a.embed_dim = j.at("embed_dim").get<std::size_t>();
  a.token_dim = j.at("token_dim").get<std::size_t>();
  a.text_hidden = j.at("text_hidden").get<std::size_t>();
  a.oov_buckets = j.at("oov_buckets").get<std::size_t>();
  return a;
}

}  // namespace

Tokenizer::Tokenizer(std::vector<std::string> vocabulary, std::size_t oov_buckets)
    : vocabulary_(std::move(vocabulary)), oov_buckets_(oov_buckets) {
  for (std::size_t i = 0; i < vocabulary_.size(); ++i) index_.emplace(vocabulary_[i], i);
}

std::vector<std::size_t> Tokenizer::encode(const std::string& text) const {
  std::vector<std::size_t> ids;
  for (const auto& w : split_words(text)) {
    if (auto it = index_.find(w); it != index_.end()) {
      ids.push_back(it->second);
    } else if (oov_buckets_ > 0) {
      ids.push_back(vocabulary_.size() + fnv1a(w) % oov_buckets_);
    }
  }
  return ids;
}

ToyDualEncoder::ToyDualEncoder(EncoderHandle handle, ToyArchitecture arch, Tokenizer tokenizer, ToyParams params,
                               double temperature)
    : handle_(std::move(handle)),
      arch_(std::move(arch)),
      tokenizer_(std::move(tokenizer)),
      params_(std::move(params)),
      temperature_(temperature) {
  if (arch_.conv_widths.empty()) throw ValidationError("toy architecture needs at least one conv layer");
}

ToyDualEncoder ToyDualEncoder::initialize(EncoderHandle handle, ToyArchitecture arch, Tokenizer tokenizer,
                                          double temperature, std::uint64_t seed) {
  Rng rng(seed);
  ToyParams p;
  auto he = [&](Shape shape, std::size_t fan_in) {
    Tensor t(std::move(shape));
    const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : t.values()) v = sd * rng.normal();
    return t;
  };
  std::size_t in_c = 3, side = arch.resolution;
  for (std::size_t i = 0; i < arch.conv_widths.size(); ++i) {
    const std::size_t out_c = arch.conv_widths[i];
    p["img.conv" + std::to_string(i) + ".w"] = he({out_c, in_c, arch.kernel, arch.kernel}, in_c * arch.kernel * arch.kernel);
    p["img.conv" + std::to_string(i) + ".b"] = Tensor({out_c}, 0.0);
    in_c = out_c;
    side = conv_out(side, arch.kernel);
  }
  const std::size_t flat = in_c * side * side;
  p["img.proj.w"] = he({arch.embed_dim, flat}, flat);
  p["img.proj.b"] = Tensor({arch.embed_dim}, 0.0);
  Tensor table({tokenizer.table_size(), arch.token_dim});
  for (auto& v : table.values()) v = rng.normal();
  p["txt.embed"] = std::move(table);
  p["txt.fc1.w"] = he({arch.text_hidden, arch.token_dim}, arch.token_dim);
  p["txt.fc1.b"] = Tensor({arch.text_hidden}, 0.0);
  p["txt.fc2.w"] = he({arch.embed_dim, arch.text_hidden}, arch.text_hidden);
  p["txt.fc2.b"] = Tensor({arch.embed_dim}, 0.0);
  return ToyDualEncoder(std::move(handle), std::move(arch), std::move(tokenizer), std::move(p), temperature);
}

ToyDualEncoder::ParamVars ToyDualEncoder::bind(ad::Tape& tape, bool trainable) const {
  ParamVars vars;
  for (const auto& [name, t] : params_) vars[name] = trainable ? tape.parameter(t) : tape.constant(t);
  return vars;
}

ad::Var ToyDualEncoder::image_forward(ad::Tape& tape, ad::Var pixels) const {
  return image_forward(tape, pixels, bind(tape, false));
}

ad::Var ToyDualEncoder::image_forward(ad::Tape& /*tape*/, ad::Var pixels, const ParamVars& params) const {
  const Shape& s = pixels.shape();
  if (s.size() != 4 || s[1] != 3 || s[2] != arch_.resolution || s[3] != arch_.resolution) {
    throw ResolutionMismatch("toy encoder '" + handle_.id + "' expects [B,3," + std::to_string(arch_.resolution) +
                             "," + std::to_string(arch_.resolution) + "], got " + shape_string(s));
  }
  // per-channel normalization owned by the adapter: (x - 0.5) / 0.25
  ad::Var h = ad::affine(pixels, 4.0, -2.0);
  for (std::size_t i = 0; i < arch_.conv_widths.size(); ++i) {
    const std::string p = "img.conv" + std::to_string(i);
    h = ad::gelu(ad::conv2d(h, params.at(p + ".w"), params.at(p + ".b"), 2, arch_.kernel / 2));
  }
  const Shape& hs = h.shape();
  h = ad::reshape(h, {hs[0], hs[1] * hs[2] * hs[3]});
  h = ad::linear(h, params.at("img.proj.w"), params.at("img.proj.b"));
  return ad::l2_normalize_rows(h);
}

ad::Var ToyDualEncoder::text_forward(ad::Tape& /*tape*/, const std::vector<std::string>& texts,
                                     const ParamVars& params) const {
  std::vector<std::vector<std::size_t>> ids;
  ids.reserve(texts.size());
  for (const auto& t : texts) {
    ids.push_back(tokenizer_.encode(t));
    if (ids.back().empty()) throw ValidationError("toy encoder '" + handle_.id + "': text has no tokens: '" + t + "'");
  }
  ad::Var h = ad::embedding_bag_mean(params.at("txt.embed"), ids);
  h = ad::gelu(ad::linear(h, params.at("txt.fc1.w"), params.at("txt.fc1.b")));
  h = ad::linear(h, params.at("txt.fc2.w"), params.at("txt.fc2.b"));
  return ad::l2_normalize_rows(h);
}

EmbeddingBatch ToyDualEncoder::encode_text(const std::vector<std::string>& texts) const {
  if (texts.empty()) throw ValidationError("encode_text: empty text list");
  ad::Tape tape;
  return EmbeddingBatch{text_forward(tape, texts, bind(tape, false)).value()};
}

void ToyDualEncoder::save(const std::filesystem::path& path) const {
  Container c;
  json meta{{"format", "xtransfer-toy-encoder"},
            {"format_version", 1},
            {"handle", handle_},
            {"architecture", architecture_to_json(arch_)},
            {"vocabulary", tokenizer_.vocabulary()},
            {"temperature", temperature_}};
  c.put_bytes("meta", meta.dump());
  for (const auto& [name, t] : params_) c.put("param/" + name, t);
  c.write(path);
}

ToyDualEncoder ToyDualEncoder::load(const std::filesystem::path& path) {
  Container c = Container::read(path);
  json meta = json::parse(c.bytes("meta"));
  if (meta.value("format", "") != "xtransfer-toy-encoder" || meta.value("format_version", 0) != 1) {
    throw IoError("not a toy encoder weights file: " + path.string());
  }
  ToyArchitecture arch = architecture_from_json(meta.at("architecture"));
  Tokenizer tok(meta.at("vocabulary").get<std::vector<std::string>>(), arch.oov_buckets);
  EncoderHandle handle = meta.at("handle").get<EncoderHandle>();
  ToyDualEncoder fresh = initialize(handle, arch, tok, 1.0, 0);
  ToyParams params;
  for (const auto& [name, t] : fresh.params()) {
    const Tensor& stored = c.tensor("param/" + name);
    if (stored.shape() != t.shape()) throw IoError("toy weights: shape mismatch for " + name);
    params[name] = stored;
  }
  return ToyDualEncoder(std::move(handle), std::move(arch), std::move(tok), std::move(params),
                        meta.at("temperature").get<double>());
}

}  // namespace xtransfer
