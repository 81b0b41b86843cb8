// xtransfer command-line tool.
//
//   xtransfer toy-train --config toy.json --out runs/toy
//   xtransfer generate  --config attack.json --out runs/attack
//   xtransfer evaluate  --config matrix.json --out runs/eval
//   xtransfer zoo list|inspect|apply|add|import-raw ...
//   xtransfer plot      --trace runs/attack/trace.jsonl --out runs/plots
//
// Exit codes: 0 success, 2 invalid input or configuration, 3 runtime failure.

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <future>
#include <iostream>
#include <numeric>
#include <set>

#include "xtransfer/container.hpp"
#include "xtransfer/dataset.hpp"
#include "xtransfer/engine.hpp"
#include "xtransfer/errors.hpp"
#include "xtransfer/evalharness.hpp"
#include "xtransfer/image_io.hpp"
#include "xtransfer/json_locate.hpp"
#include "xtransfer/plots.hpp"
#include "xtransfer/zoo.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace xtransfer;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

struct Globals {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::size_t workers = 1;
  std::string log_level = "info";
};

// Config file with a pointer -> line map for error messages.
struct ConfigFile {
  fs::path path;
  json data;
  std::map<std::string, std::size_t> lines;

  [[noreturn]] void fail(const std::string& pointer, const std::string& message) const {
    const std::size_t line = line_of_pointer(lines, pointer);
    throw ValidationError(path.string() + ":" + std::to_string(line) + ": " + message +
                          (pointer.empty() ? "" : " (at " + pointer + ")"));
  }
  fs::path dir() const { return path.parent_path(); }
  fs::path resolve(const std::string& p) const {
    fs::path q(p);
    return q.is_absolute() ? q : dir() / q;
  }
};

ConfigFile load_config(const std::string& path) {
  if (path.empty()) throw ValidationError("--config is required");
  ConfigFile c;
  c.path = path;
  std::string text;
  try {
    text = read_file(path);
  } catch (const IoError& e) {
    throw ValidationError(e.what());
  }
  try {
    c.data = json::parse(text);
  } catch (const json::parse_error& e) {
    const std::size_t upto = std::min<std::size_t>(e.byte, text.size());
    const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(upto), '\n');
    throw ValidationError(path + ":" + std::to_string(line) + ": invalid JSON: " + e.what());
  }
  if (!c.data.is_object()) throw ValidationError(path + ":1: config must be a JSON object");
  c.lines = json_pointer_lines(text);
  if (c.data.contains("schema_version") && c.data.at("schema_version") != 1) {
    c.fail("/schema_version", "unsupported schema_version (this tool reads version 1)");
  }
  return c;
}

fs::path require_out(const Globals& g) {
  if (g.out.empty()) throw ValidationError("--out is required");
  fs::create_directories(g.out);
  return g.out;
}

std::string timestamp() {
  std::time_t t = std::time(nullptr);
  if (const char* s = std::getenv("SOURCE_DATE_EPOCH")) t = static_cast<std::time_t>(std::stoll(s));
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

void write_json(const fs::path& p, const json& j) { write_file_atomic(p, j.dump(2) + "\n"); }

std::string zoo_index_path(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("XT_ZOO_INDEX")) return env;
  throw ValidationError("no zoo index: pass --index or set XT_ZOO_INDEX");
}

// Adds `id` to the index at `index_path`, creating it if needed; the stored
// path is relative to the index directory when possible.
void register_artifact(const fs::path& index_path, const std::string& key, const std::string& id,
                       ArtifactDescriptor d) {
  ZooIndex index = fs::exists(index_path) ? ZooIndex::load(index_path) : ZooIndex{};
  const fs::path abs_meta = fs::absolute(d.path);
  const fs::path rel = abs_meta.lexically_relative(fs::absolute(index_path).parent_path());
  d.path = rel.empty() ? abs_meta.string() : rel.string();
  index.add(key, id, std::move(d));
  index.save(index_path);
}

// ---------------------------------------------------------------------------
// toy-train

int cmd_toy_train(const Globals& g) {
  const ConfigFile cfg = load_config(g.config);
  const fs::path out = require_out(g);
  json j = cfg.data;
  static const std::set<std::string> known = {"schema_version", "toy", "seeds", "surrogates", "datasets"};
  for (const auto& [key, v] : j.items()) {
    if (!known.count(key)) cfg.fail("/" + key, "unknown toy-train key '" + key + "'");
  }
  ToyTrainConfig tc;
  try {
    tc = j.value("toy", json::object()).get<ToyTrainConfig>();
    tc.validate();
  } catch (const ValidationError& e) {
    cfg.fail("/toy" + e.pointer, e.what());
  } catch (const json::exception& e) {
    cfg.fail("/toy", e.what());
  }
  std::vector<std::uint64_t> seeds = {g.seed.value_or(0)};
  if (j.contains("seeds")) {
    try {
      seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    } catch (const json::exception& e) {
      cfg.fail("/seeds", e.what());
    }
    if (g.seed) {
      for (auto& s : seeds) s += *g.seed;
    }
  }
  if (seeds.empty()) cfg.fail("/seeds", "seeds must not be empty");
  std::size_t surrogates = seeds.size();
  if (j.contains("surrogates")) {
    if (!j.at("surrogates").is_number_unsigned() || j.at("surrogates").get<std::size_t>() < 1 ||
        j.at("surrogates").get<std::size_t>() > seeds.size()) {
      cfg.fail("/surrogates", "surrogates must be an integer in [1, |seeds|]");
    }
    surrogates = j.at("surrogates").get<std::size_t>();
  }
  const json ds = j.value("datasets", json::object());
  auto dataset_spec = [&](const char* name, std::uint64_t seed, std::size_t per_class) {
    ShapesDatasetSpec s = tc.dataset;
    s.seed = seed;
    s.images_per_class = per_class;
    if (ds.contains(name)) {
      const json& d = ds.at(name);
      try {
        s.seed = d.value("seed", s.seed);
        s.images_per_class = d.value("images_per_class", s.images_per_class);
      } catch (const json::exception& e) {
        cfg.fail(std::string("/datasets/") + name, e.what());
      }
    }
    return s;
  };

  fs::create_directories(out / "encoders");
  SearchSpace space{"toy", {}};
  SearchSpace victims{"toy-victims", {}};
  json summary = json::array();
  const ShapesDatasetSpec eval_spec = dataset_spec("eval", 200, 20);
  const ShapesDataset eval = generate_shapes(eval_spec);
  std::vector<std::string> prompts;
  for (const auto& c : eval.class_names) prompts.push_back(fill_template(kToyCaptionTemplate, c));
  std::vector<std::size_t> all(eval.size());
  std::iota(all.begin(), all.end(), 0);
  const ImageBatch eval_images = eval.batch(all);

  for (std::size_t i = 0; i < seeds.size(); ++i) {
    spdlog::info("training toy encoder {}/{} (seed {})", i + 1, seeds.size(), seeds[i]);
    ToyTrainResult r = train_toy_encoder(tc, seeds[i]);
    const std::string file = "encoders/" + r.handle.id + ".bin";
    EncoderHandle h = r.handle;
    h.backend_locator = "toy:" + file;
    r.encoder->set_handle(h);
    r.encoder->save(out / file);
    (i < surrogates ? space : victims).handles.push_back(h);
    const double acc = zero_shot_classify(*r.encoder, eval_images, eval.labels, prompts);
    spdlog::info("  loss {:.4f} -> {:.4f}, held-out zero-shot accuracy {:.2f}%", r.initial_loss, r.final_loss, acc);
    summary.push_back({{"id", h.id},
                       {"seed", seeds[i]},
                       {"initial_loss", r.initial_loss},
                       {"final_loss", r.final_loss},
                       {"epoch_losses", r.epoch_losses},
                       {"zero_shot_accuracy", acc},
                       {"role", i < surrogates ? "surrogate" : "victim"}});
  }
  save_search_space(space, out / "search_space.json");
  if (!victims.handles.empty()) save_search_space(victims, out / "victims.json");

  // Datasets as manifests with PNG images.
  auto export_dataset = [&](const ShapesDataset& d, const std::string& id, DatasetKind kind) {
    DatasetManifest m;
    m.id = id;
    m.kind = kind;
    m.root = "images/" + id;
    m.class_names = d.class_names;
    m.prompt_template = kToyCaptionTemplate;
    for (std::size_t i = 0; i < d.size(); ++i) {
      DatasetEntry e;
      e.pixels = d.images[i];
      if (kind == DatasetKind::Classification) {
        e.label = d.labels[i];
      } else {
        e.captions = {d.captions[i]};
      }
      m.entries.push_back(std::move(e));
    }
    save_manifest(m, out / "datasets" / (id + ".jsonl"));
  };
  const ShapesDatasetSpec sur_spec = dataset_spec("surrogate", 100, 40);
  export_dataset(generate_shapes(sur_spec), "shapes_surrogate", DatasetKind::Classification);
  export_dataset(eval, "shapes_eval", DatasetKind::Classification);
  const ShapesDatasetSpec cap_spec = dataset_spec("captioned", 300, 2);
  export_dataset(generate_shapes(cap_spec), "shapes_captioned", DatasetKind::Captioned);

  write_json(out / "toy_train_summary.json", {{"config", tc}, {"encoders", summary}});
  std::vector<Series> curves;
  for (const auto& e : summary) curves.push_back({e.at("id"), e.at("epoch_losses").get<std::vector<double>>()});
  write_file_atomic(out / "toy_train_loss.svg", line_chart_svg("Toy contrastive training", curves, "epoch", "loss"));
  spdlog::info("wrote {} encoders, search space and datasets under {}", seeds.size(), out.string());
  return kExitOk;
}

// ---------------------------------------------------------------------------
// generate

struct LoadedAttack {
  AttackConfig config;
  std::string name;
  fs::path registry_dir;
  ImageBatch images;
};

LoadedAttack load_attack(const ConfigFile& cfg, const Globals& g, const fs::path& out) {
  LoadedAttack la;
  json j = cfg.data;
  la.name = j.value("name", "");
  j.erase("name");
  fs::path space_path;
  if (j.contains("search_space") && j.at("search_space").is_string()) {
    space_path = cfg.resolve(j.at("search_space").get<std::string>());
    try {
      j["search_space"] = json::parse(read_file(space_path));
    } catch (const std::exception& e) {
      cfg.fail("/search_space", "cannot read search space " + space_path.string() + ": " + e.what());
    }
    la.registry_dir = space_path.parent_path();
  } else {
    la.registry_dir = cfg.dir();
  }
  if (!j.contains("search_space")) cfg.fail("", "missing search_space");
  if (!j.contains("surrogate_dataset")) cfg.fail("", "missing surrogate_dataset");
  try {
    la.config = j.get<AttackConfig>();
    if (g.seed) la.config.seed = *g.seed;
    if (g.workers > 1) la.config.workers = g.workers;
    if (la.config.checkpoint_path.empty()) {
      la.config.checkpoint_path = out / "checkpoint.xtc";
    } else if (la.config.checkpoint_path.is_relative()) {
      la.config.checkpoint_path = out / la.config.checkpoint_path;
    }
    la.config.validate();
  } catch (const ValidationError& e) {
    std::string ptr = e.pointer;
    if (!space_path.empty() && ptr.rfind("/search_space", 0) == 0) ptr = "/search_space";
    cfg.fail(ptr, e.what());
  }
  const fs::path manifest = cfg.resolve(la.config.surrogate_dataset);
  try {
    la.images = load_manifest(manifest).images();
  } catch (const ValidationError& e) {
    cfg.fail("/surrogate_dataset", e.what());
  } catch (const IoError& e) {
    cfg.fail("/surrogate_dataset", e.what());
  }
  if (la.name.empty()) {
    std::string tm = to_string(la.config.threat_model.kind);
    if (la.config.threat_model.kind == ThreatKind::Linf) {
      tm += "_eps" + std::to_string(static_cast<int>(std::lround(la.config.threat_model.epsilon * 255.0)));
    }
    la.name = "xtransfer_" + la.config.search_space.name + "_" + tm +
              (la.config.targeted ? "_targeted" : "_non_targeted");
  }
  return la;
}

int cmd_generate(const Globals& g, const std::string& resume) {
  const ConfigFile cfg = load_config(g.config);
  const fs::path out = require_out(g);
  LoadedAttack la = load_attack(cfg, g, out);
  auto registry = std::make_shared<EncoderRegistry>(la.registry_dir);
  AttackJob job = resume.empty() ? AttackJob(la.config, registry, la.images)
                                 : AttackJob::resume(resume, la.config, registry, la.images);
  spdlog::info("generating '{}': {} steps, k={} of N={}, strategy {}", la.name, job.total_steps(), la.config.k,
               la.config.search_space.size(), to_string(la.config.strategy.kind));
  const std::size_t report_every = std::max<std::size_t>(1, job.total_steps() / 10);
  job.on_step = [&](const StepRecord& r) {
    if ((r.step + 1) % report_every == 0 || r.step + 1 == job.total_steps()) {
      spdlog::info("step {}/{}: ensemble loss {:.5f}, total {:.5f}", r.step + 1, job.total_steps(), r.ensemble_loss,
                   r.total_loss);
    }
    spdlog::debug("step {} chose {}", r.step, fmt::join(r.chosen, ","));
  };
  try {
    job.run();
  } catch (const NonFiniteLoss&) {
    write_file_atomic(out / "trace.partial.jsonl", job.finished_trace().to_jsonl());
    throw;
  }
  Perturbation p = job.perturbation();
  p.meta.created_at = timestamp();
  const AttackTrace trace = job.finished_trace();
  const auto hist = trace.selection_histogram();
  json summary{{"name", la.name},
               {"steps", job.steps_done()},
               {"k", la.config.k},
               {"strategy", to_string(la.config.strategy.kind)},
               {"search_space", la.config.search_space.name},
               {"final_ensemble_loss", trace.steps.empty() ? json(nullptr) : json(trace.steps.back().ensemble_loss)},
               {"final_total_loss", trace.steps.empty() ? json(nullptr) : json(trace.steps.back().total_loss)},
               {"selection_histogram", hist},
               {"final_bandit_state", trace.final_state},
               {"config_digest", la.config.digest()}};
  json artifact_summary{{"search_space", la.config.search_space.name},
                        {"k", la.config.k},
                        {"strategy", to_string(la.config.strategy.kind)},
                        {"steps", job.steps_done()},
                        {"seed", la.config.seed}};
  ArtifactDescriptor d = save_perturbation(p, out / (la.name + ".json"), artifact_summary);
  register_artifact(out / "zoo_index.json", threat_model_key(p), la.name, d);
  write_file_atomic(out / "trace.jsonl", trace.to_jsonl());
  summary["artifact"] = {{"path", la.name + ".json"}, {"digest", d.digest}};
  write_json(out / "summary.json", summary);

  std::vector<std::string> ids = la.config.search_space.ids();
  std::vector<double> counts;
  for (const auto& id : ids) counts.push_back(static_cast<double>(hist.count(id) ? hist.at(id) : 0));
  write_file_atomic(out / "selection_histogram.svg",
                    bar_chart_svg("Surrogate selections", ids, {{"selections", counts}}, "times selected"));
  std::vector<double> losses;
  for (const auto& s : trace.steps) losses.push_back(s.ensemble_loss);
  write_file_atomic(out / "loss.svg", line_chart_svg("Ensemble loss", {{"ensemble", losses}}, "step", "loss"));
  std::cout << out.string() << "/" << la.name << ".json " << d.digest << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// evaluate

struct PerturbationRef {
  std::string label;
  Perturbation p;
};

int cmd_evaluate(const Globals& g) {
  const ConfigFile cfg = load_config(g.config);
  const fs::path out = require_out(g);
  const json& j = cfg.data;
  static const std::set<std::string> known = {"schema_version", "perturbations", "victims", "datasets",
                                              "rank_trials",    "seed",          "target_text", "zoo_index"};
  for (const auto& [key, v] : j.items()) {
    if (!known.count(key)) cfg.fail("/" + key, "unknown evaluation key '" + key + "'");
  }
  for (const char* key : {"perturbations", "victims", "datasets"}) {
    if (!j.contains(key)) cfg.fail("", std::string("missing '") + key + "'");
  }

  std::vector<PerturbationRef> perts;
  std::optional<ZooIndex> zoo;
  const json& pj = j.at("perturbations");
  if (!pj.is_array() || pj.empty()) cfg.fail("/perturbations", "perturbations must be a non-empty array");
  for (std::size_t i = 0; i < pj.size(); ++i) {
    const std::string ptr = "/perturbations/" + std::to_string(i);
    const json& e = pj[i];
    try {
      if (e.is_string()) {
        const fs::path p = cfg.resolve(e.get<std::string>());
        std::string label = p.filename().string();
        if (label.size() > 5 && label.substr(label.size() - 5) == ".json") label.resize(label.size() - 5);
        perts.push_back({label, load_perturbation(p)});
      } else if (e.is_object() && e.contains("zoo")) {
        if (!zoo) {
          const std::string ip = j.contains("zoo_index") ? cfg.resolve(j.at("zoo_index").get<std::string>()).string()
                                                         : zoo_index_path("");
          zoo = ZooIndex::load(ip);
        }
        const std::string tm = e.at("threat_model").get<std::string>();
        const std::string id = e.at("zoo").get<std::string>();
        perts.push_back({id, zoo->load_attacker(tm, id)});
      } else {
        cfg.fail(ptr, "expected an artifact path or {\"threat_model\":..., \"zoo\": id}");
      }
    } catch (const UnknownAttacker& ex) {
      cfg.fail(ptr, ex.what());
    } catch (const IoError& ex) {
      cfg.fail(ptr, ex.what());
    } catch (const json::exception& ex) {
      cfg.fail(ptr, ex.what());
    }
  }

  SearchSpace victims;
  fs::path victim_dir = cfg.dir();
  try {
    if (j.at("victims").is_string()) {
      const fs::path vp = cfg.resolve(j.at("victims").get<std::string>());
      victims = load_search_space(vp);
      victim_dir = vp.parent_path();
    } else {
      victims = j.at("victims").get<SearchSpace>();
      victims.validate();
    }
  } catch (const std::exception& e) {
    cfg.fail("/victims", e.what());
  }

  struct DatasetJob {
    DatasetManifest manifest;
    std::vector<EvalTask> tasks;
  };
  std::vector<DatasetJob> datasets;
  const json& dj = j.at("datasets");
  if (!dj.is_array() || dj.empty()) cfg.fail("/datasets", "datasets must be a non-empty array");
  for (std::size_t i = 0; i < dj.size(); ++i) {
    const std::string ptr = "/datasets/" + std::to_string(i);
    DatasetJob d;
    try {
      d.manifest = load_manifest(cfg.resolve(dj[i].at("manifest").get<std::string>()));
      if (dj[i].contains("prompt_template")) d.manifest.prompt_template = dj[i].at("prompt_template");
      for (const auto& t : dj[i].at("tasks")) d.tasks.push_back(parse_eval_task(t.get<std::string>()));
    } catch (const json::exception& e) {
      cfg.fail(ptr, e.what());
    } catch (const ValidationError& e) {
      cfg.fail(ptr, e.what());
    } catch (const IoError& e) {
      cfg.fail(ptr, e.what());
    }
    if (d.tasks.empty()) cfg.fail(ptr + "/tasks", "no tasks listed");
    datasets.push_back(std::move(d));
  }
  EvalOptions opts;
  opts.rank_trials = j.value("rank_trials", std::size_t{50});
  opts.seed = g.seed.value_or(j.value("seed", std::uint64_t{0}));
  if (j.contains("target_text")) opts.target_text = j.at("target_text").get<std::string>();

  // Matrix cells in deterministic order: perturbation x victim x dataset x task.
  struct Cell {
    std::size_t p, v, d;
    EvalTask task;
  };
  std::vector<Cell> cells;
  for (std::size_t p = 0; p < perts.size(); ++p) {
    for (std::size_t v = 0; v < victims.size(); ++v) {
      for (std::size_t d = 0; d < datasets.size(); ++d) {
        for (EvalTask t : datasets[d].tasks) cells.push_back({p, v, d, t});
      }
    }
  }
  auto registry = std::make_shared<EncoderRegistry>(victim_dir);
  std::vector<std::optional<EvalReport>> results(cells.size());
  std::vector<std::string> errors(cells.size());
  auto run_cell = [&](std::size_t i) {
    const Cell& c = cells[i];
    try {
      auto victim = registry->get(victims.handles[c.v]);
      results[i] = evaluate_task(c.task, *victim, datasets[c.d].manifest, perts[c.p].p, opts);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, g.workers);
  for (std::size_t begin = 0; begin < cells.size(); begin += workers) {
    const std::size_t end = std::min(cells.size(), begin + workers);
    std::vector<std::future<void>> futs;
    for (std::size_t i = begin; i < end; ++i) futs.push_back(std::async(std::launch::async, run_cell, i));
    for (auto& f : futs) f.get();
  }

  json all = json::array();
  json failures = json::array();
  std::map<std::size_t, std::vector<EvalReport>> by_pert;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const Cell& c = cells[i];
    if (!results[i]) {
      failures.push_back({{"perturbation", perts[c.p].label},
                          {"victim", victims.handles[c.v].id},
                          {"dataset", datasets[c.d].manifest.id},
                          {"task", to_string(c.task)},
                          {"error", errors[i]}});
      spdlog::error("{} / {} / {} / {}: {}", perts[c.p].label, victims.handles[c.v].id, datasets[c.d].manifest.id,
                    to_string(c.task), errors[i]);
      continue;
    }
    check_report(*results[i]);
    json r = report_to_json(*results[i]);
    r["perturbation"] = perts[c.p].label;
    all.push_back(r);
    by_pert[c.p].push_back(*results[i]);
  }
  write_json(out / "reports.json", all);
  for (const auto& [p, reports] : by_pert) {
    write_file_atomic(out / (perts[p].label + ".csv"), reports_to_csv(reports));
    std::vector<std::string> labels;
    Series asr{"ASR (%)", {}};
    for (const auto& r : reports) {
      labels.push_back(r.victim_id + "/" + r.dataset_id + "/" + to_string(r.task));
      asr.values.push_back(r.asr.value_or(std::nan("")));
    }
    write_file_atomic(out / (perts[p].label + "_asr.svg"),
                      bar_chart_svg("ASR of " + perts[p].label, labels, {asr}, "ASR (%)"));
    if (labels.size() >= 3) {
      write_file_atomic(out / (perts[p].label + "_radar.svg"),
                        radar_chart_svg("ASR of " + perts[p].label, labels, {asr}, 100.0));
    }
  }
  if (!failures.empty()) {
    write_json(out / "failures.json", failures);
    spdlog::error("{} of {} evaluation cells failed; see failures.json", failures.size(), cells.size());
    return kExitRuntime;
  }
  spdlog::info("wrote {} reports to {}", all.size(), out.string());
  return kExitOk;
}

// ---------------------------------------------------------------------------
// zoo

int cmd_zoo_list(const std::string& index_flag) {
  const ZooIndex z = ZooIndex::load(zoo_index_path(index_flag));
  for (const auto& tm : z.list_threat_models()) {
    std::cout << tm << "\n";
    for (const auto& id : z.list_attackers(tm)) std::cout << "  " << id << "\n";
  }
  return kExitOk;
}

fs::path artifact_path(const ZooIndex& z, const std::string& tm, const std::string& id) {
  const ArtifactDescriptor& d = z.descriptor(tm, id);
  fs::path p = d.path;
  return p.is_relative() ? z.base_dir() / p : p;
}

int cmd_zoo_inspect(const std::string& index_flag, const std::string& tm, const std::string& id) {
  const ZooIndex z = ZooIndex::load(zoo_index_path(index_flag));
  const Perturbation p = z.load_attacker(tm, id);
  json meta = json::parse(read_file(artifact_path(z, tm, id)));
  json stats{{"descriptor", z.descriptor(tm, id)}, {"metadata", meta}};
  if (!p.delta.empty()) {
    double mx = 0.0, l2 = 0.0;
    for (float v : p.delta.values) {
      mx = std::max(mx, std::abs(static_cast<double>(v)));
      l2 += static_cast<double>(v) * v;
    }
    stats["delta_stats"] = {{"max_abs", mx}, {"l2_norm", std::sqrt(l2)}, {"max_abs_255", mx * 255.0}};
  }
  std::cout << stats.dump(2) << "\n";
  return kExitOk;
}

int cmd_zoo_apply(const Globals& g, const std::string& index_flag, const std::string& tm, const std::string& id,
                  const std::string& input, const std::string& format) {
  const ZooIndex z = ZooIndex::load(zoo_index_path(index_flag));
  const Attacker attack = make_attacker(z.load_attacker(tm, id));
  const fs::path out = require_out(g);
  if (!fs::is_directory(input)) throw ValidationError("--input must be a directory of .png/.ppm images");
  if (format != "png" && format != "ppm") throw ValidationError("--format must be png or ppm");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(input)) {
    const std::string ext = e.path().extension().string();
    if (e.is_regular_file() && (ext == ".png" || ext == ".ppm")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    const Tensor img = read_image(f);
    Shape s = img.shape();
    const ImageBatch adv = attack(ImageBatch(img.reshaped({1, s[0], s[1], s[2]})));
    write_image(out / (f.stem().string() + "." + format), adv.pixels().reshaped(s));
  }
  spdlog::info("perturbed {} images into {}", files.size(), out.string());
  return kExitOk;
}

int cmd_zoo_add(const std::string& index_flag, const std::string& artifact, std::string id) {
  const Perturbation p = load_perturbation(artifact);
  if (id.empty()) {
    id = fs::path(artifact).filename().string();
    if (id.size() > 5 && id.substr(id.size() - 5) == ".json") id.resize(id.size() - 5);
  }
  ArtifactDescriptor d;
  d.path = artifact;
  d.digest = metadata_digest(json::parse(read_file(artifact)));
  register_artifact(zoo_index_path(index_flag), threat_model_key(p), id, d);
  std::cout << threat_model_key(p) << " " << id << "\n";
  return kExitOk;
}

int cmd_zoo_import_raw(const Globals& g, const std::string& index_flag, const std::string& raw, std::size_t h,
                       std::size_t w, double eps255, const std::string& id) {
  if (id.empty()) throw ValidationError("--id is required");
  Perturbation p = ingest_raw_linf(raw, {h, w}, eps255 / 255.0);
  p.meta.created_at = timestamp();
  const fs::path out = require_out(g);
  ArtifactDescriptor d = save_perturbation(p, out / (id + ".json"), {{"source", fs::path(raw).filename().string()}});
  if (!index_flag.empty() || std::getenv("XT_ZOO_INDEX")) {
    register_artifact(zoo_index_path(index_flag), threat_model_key(p), id, d);
  }
  std::cout << d.path << " " << d.digest << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// plot

int cmd_plot(const Globals& g, const std::string& trace_path, const std::string& reports_path) {
  const fs::path out = require_out(g);
  if (trace_path.empty() && reports_path.empty()) throw ValidationError("plot needs --trace and/or --reports");
  if (!trace_path.empty()) {
    const AttackTrace t = AttackTrace::from_jsonl(read_file(trace_path));
    std::map<std::string, Series> per;
    Series ens{"ensemble", {}};
    for (std::size_t i = 0; i < t.steps.size(); ++i) {
      ens.values.push_back(t.steps[i].ensemble_loss);
      for (const auto& [id, v] : t.steps[i].losses) {
        auto& s = per[id];
        s.name = id;
        s.values.resize(i + 1, std::nan(""));
        s.values[i] = v;
      }
    }
    std::vector<Series> series = {ens};
    for (auto& [id, s] : per) {
      s.values.resize(t.steps.size(), std::nan(""));
      series.push_back(s);
    }
    write_file_atomic(out / "trace_losses.svg", line_chart_svg("Per-encoder losses", series, "step", "loss"));
    const auto hist = t.selection_histogram();
    std::vector<std::string> ids;
    std::vector<double> counts;
    for (const auto& [id, c] : hist) {
      ids.push_back(id);
      counts.push_back(static_cast<double>(c));
    }
    write_file_atomic(out / "trace_selections.svg",
                      bar_chart_svg("Surrogate selections", ids, {{"selections", counts}}, "times selected"));
  }
  if (!reports_path.empty()) {
    const json reports = json::parse(read_file(reports_path));
    std::map<std::string, Series> by_pert;
    std::vector<std::string> labels;
    std::map<std::string, std::size_t> label_index;
    for (const auto& r : reports) {
      const std::string label = r.at("victim").get<std::string>() + "/" + r.at("dataset").get<std::string>() + "/" +
                                r.at("task").get<std::string>();
      if (!label_index.count(label)) {
        label_index[label] = labels.size();
        labels.push_back(label);
      }
    }
    for (const auto& r : reports) {
      const std::string p = r.value("perturbation", "perturbation");
      auto& s = by_pert[p];
      s.name = p;
      s.values.resize(labels.size(), std::nan(""));
      const std::string label = r.at("victim").get<std::string>() + "/" + r.at("dataset").get<std::string>() + "/" +
                                r.at("task").get<std::string>();
      s.values[label_index[label]] = r.at("asr").is_number() ? r.at("asr").get<double>() : std::nan("");
    }
    std::vector<Series> series;
    for (auto& [p, s] : by_pert) series.push_back(s);
    write_file_atomic(out / "reports_asr.svg", bar_chart_svg("Attack success rate", labels, series, "ASR (%)"));
    if (labels.size() >= 3) {
      write_file_atomic(out / "reports_radar.svg", radar_chart_svg("Attack success rate", labels, series, 100.0));
    }
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Universal adversarial perturbations against dual encoders with bandit surrogate selection"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Configuration file (JSON)");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--seed", g.seed, "Seed override");
  app.add_option("--workers", g.workers, "Concurrent workers")->check(CLI::PositiveNumber);
  app.add_option("--log-level", g.log_level, "error, warn, info or debug")
      ->check(CLI::IsMember({"error", "warn", "info", "debug"}));

  auto* toy = app.add_subcommand("toy-train", "Train toy dual encoders and export a search space and datasets");
  std::string resume;
  auto* gen = app.add_subcommand("generate", "Generate a UAP/TUAP with bandit-selected surrogates");
  gen->add_option("--resume", resume, "Resume from a checkpoint file");
  auto* eval = app.add_subcommand("evaluate", "Run a perturbation x victim x dataset evaluation matrix");

  auto* zoo = app.add_subcommand("zoo", "Inspect and use a perturbation zoo");
  zoo->require_subcommand(1);
  std::string index_flag;
  zoo->add_option("--index", index_flag, "Zoo index file (default: $XT_ZOO_INDEX)");
  auto* zlist = zoo->add_subcommand("list", "List threat models and attacker ids");
  std::string tm, id, input, format = "png", artifact, raw;
  auto* zinspect = zoo->add_subcommand("inspect", "Verify an artifact and print its metadata");
  zinspect->add_option("threat_model", tm)->required();
  zinspect->add_option("id", id)->required();
  auto* zapply = zoo->add_subcommand("apply", "Perturb a directory of images");
  zapply->add_option("threat_model", tm)->required();
  zapply->add_option("id", id)->required();
  zapply->add_option("--input", input, "Directory of .png/.ppm images")->required();
  zapply->add_option("--format", format, "Output format: png or ppm");
  auto* zadd = zoo->add_subcommand("add", "Register an artifact in the index");
  zadd->add_option("artifact", artifact)->required();
  zadd->add_option("--id", id, "Attacker id (default: artifact file stem)");
  auto* zraw = zoo->add_subcommand("import-raw", "Convert a raw float32 [3,H,W] Linf delta into an artifact");
  std::size_t height = 224, width = 224;
  double eps255 = 12.0;
  zraw->add_option("raw", raw)->required();
  zraw->add_option("--height", height);
  zraw->add_option("--width", width);
  zraw->add_option("--epsilon-255", eps255, "Linf bound in 1/255 units");
  zraw->add_option("--id", id)->required();

  auto* plot = app.add_subcommand("plot", "Render SVG plots from a trace and/or reports");
  std::string trace_path, reports_path;
  plot->add_option("--trace", trace_path, "trace.jsonl from generate");
  plot->add_option("--reports", reports_path, "reports.json from evaluate");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitValidation;
  }

  auto logger = spdlog::stderr_color_mt("xtransfer");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::from_str(g.log_level));

  try {
    if (toy->parsed()) return cmd_toy_train(g);
    if (gen->parsed()) return cmd_generate(g, resume);
    if (eval->parsed()) return cmd_evaluate(g);
    if (plot->parsed()) return cmd_plot(g, trace_path, reports_path);
    if (zlist->parsed()) return cmd_zoo_list(index_flag);
    if (zinspect->parsed()) return cmd_zoo_inspect(index_flag, tm, id);
    if (zapply->parsed()) return cmd_zoo_apply(g, index_flag, tm, id, input, format);
    if (zadd->parsed()) return cmd_zoo_add(index_flag, artifact, id);
    if (zraw->parsed()) return cmd_zoo_import_raw(g, index_flag, raw, height, width, eps255, id);
  } catch (const ValidationError& e) {
    spdlog::error("{}", e.what());
    return kExitValidation;
  } catch (const UnknownAttacker& e) {
    spdlog::error("{}", e.what());
    return kExitValidation;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitRuntime;
  }
  return kExitValidation;
}
