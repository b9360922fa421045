#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

#include "bench_report.hpp"
#include "eval_dirs.hpp"
#include "focalforge/cmos.hpp"
#include "focalforge/config.hpp"
#include "focalforge/datagen.hpp"
#include "focalforge/log.hpp"
#include "focalforge/parallel.hpp"
#include "focalforge/toydata.hpp"
#include "focalforge/train.hpp"
#include "gradcheck_suite.hpp"

namespace fs = std::filesystem;
using namespace focalforge;

namespace {

struct Common {
  int threads = -1;
  std::optional<std::uint64_t> seed;
  std::string log_path;
  bool quiet = false;
};

void apply_threads(const Common& c, const RunConfig* cfg) {
  int n = c.threads;
  if (n < 0) n = thread_count_from_env();
  if (n <= 0 && cfg) n = cfg->threads;
  if (n > 0) set_thread_count(n);
}

RunConfig load_config(const std::string& path, const Common& c) {
  RunConfig cfg = path.empty() ? RunConfig{} : parse_config(path);
  if (c.seed) {
    cfg.seed = *c.seed;
    cfg.dataset.seed = *c.seed;
    cfg.train.seed = *c.seed;
  }
  return cfg;
}

void write_json(const nlohmann::json& j, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << "\n";
    return;
  }
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p);
  if (!os) throw IoError("cannot write " + path);
  os << j.dump(2) << "\n";
  std::cout << p.string() << "\n";
}

RunLog make_log(const Common& c, const fs::path& default_path) {
  const fs::path p = c.log_path.empty() ? default_path : fs::path(c.log_path);
  return RunLog(p, &std::cerr, c.quiet ? Verbosity::kQuiet : Verbosity::kNormal);
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("--threads", c.threads, "Worker threads (default: FOCALFORGE_THREADS or all cores)")
      ->check(CLI::NonNegativeNumber);
  app->add_option("--seed", c.seed, "Seed overriding the config");
  app->add_option("--log", c.log_path, "JSON-lines log path");
  app->add_flag("--quiet", c.quiet, "Suppress the human-readable log mirror");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"focalforge: space-variant defocus synthesis and joint blur/semantic estimation"};
  app.require_subcommand(1);
  Common common;

  // synth
  auto* synth = app.add_subcommand("synth", "Synthesize LR images and blur maps from a source manifest");
  std::string s_manifest, s_config, s_out, s_split;
  int s_group = 0;
  synth->add_option("--manifest", s_manifest, "Source manifest (JSONL)")->required();
  synth->add_option("--config", s_config, "Config file");
  synth->add_option("--out", s_out, "Output directory")->required();
  synth->add_option("--only-split", s_split, "train|val|test")->check(CLI::IsMember({"train", "val", "test"}));
  synth->add_option("--group", s_group, "Test group 1..groups")->check(CLI::Range(1, 64));
  add_common(synth, common);

  // manifest
  auto* manifest = app.add_subcommand("manifest", "Build a split/group manifest from source triples");
  std::string m_sources, m_config, m_out;
  manifest->add_option("--sources", m_sources, "JSONL with id, rgb_path, depth_path, label_path")->required();
  manifest->add_option("--config", m_config, "Config file ([dataset] sizes and preset)");
  manifest->add_option("--out", m_out, "Output manifest path")->required();
  add_common(manifest, common);

  // toydata
  auto* toy = app.add_subcommand("toydata", "Generate the synthetic two-plane dataset");
  std::string t_out;
  ToySpec toy_spec;
  toy->add_option("--out", t_out, "Output directory")->required();
  toy->add_option("--count", toy_spec.count, "Number of scenes");
  toy->add_option("--hr-size", toy_spec.hr_size, "HR side length");
  toy->add_option("--classes", toy_spec.classes, "Class count (even, <= 8)");
  add_common(toy, common);

  // train
  auto* trn = app.add_subcommand("train", "Train the estimation network");
  std::string r_manifest, r_config, r_out, r_single;
  bool r_ablate_gia = false, r_ablate_aux = false;
  trn->add_option("--manifest", r_manifest, "Synthesized manifest")->required();
  trn->add_option("--config", r_config, "Config file");
  trn->add_option("--out", r_out, "Output directory")->required();
  trn->add_flag("--ablate-gia", r_ablate_gia, "Replace GIA modules by addition");
  trn->add_flag("--ablate-aux", r_ablate_aux, "Drop the auxiliary losses");
  trn->add_option("--single-task", r_single, "blur|seg")->check(CLI::IsMember({"blur", "seg"}));
  add_common(trn, common);

  // eval
  auto* ev = app.add_subcommand("eval", "Score predictions against ground truth");
  std::string e_pred, e_gt, e_kind, e_report;
  int e_classes = 40;
  double e_sigma_max = 5.0;
  ev->add_option("--pred", e_pred, "Prediction directory")->required();
  ev->add_option("--gt", e_gt, "Ground-truth directory")->required();
  ev->add_option("--kind", e_kind, "sr|blur|seg")->required()->check(CLI::IsMember({"sr", "blur", "seg"}));
  ev->add_option("--report", e_report, "Report JSON path");
  ev->add_option("--classes", e_classes, "Class count for seg");
  ev->add_option("--sigma-max", e_sigma_max, "Blur normalization for blur");
  add_common(ev, common);

  // estimate
  auto* est = app.add_subcommand("estimate", "Estimate blur and semantic maps for an LR image");
  std::string x_image, x_ckpt, x_out;
  est->add_option("--image", x_image, "LR PNG")->required();
  est->add_option("--ckpt", x_ckpt, "Checkpoint")->required();
  est->add_option("--out", x_out, "Output directory")->required();
  add_common(est, common);

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  std::string g_module = "all", g_report;
  gc->add_option("--module", g_module, "gia|cmos|ops|all")->check(CLI::IsMember({"gia", "cmos", "ops", "all"}));
  gc->add_option("--report", g_report, "Report JSON path");
  add_common(gc, common);

  // bench
  auto* bn = app.add_subcommand("bench", "Time variant_blur (exact vs lut, 1/2/4 threads)");
  tools::BenchOptions b_opts;
  std::string b_report;
  bn->add_option("--width", b_opts.width);
  bn->add_option("--height", b_opts.height);
  bn->add_option("--kernel", b_opts.kernel_size);
  bn->add_option("--repeats", b_opts.repeats);
  bn->add_option("--report", b_report, "Report JSON path");
  add_common(bn, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (synth->parsed()) {
      const RunConfig cfg = load_config(s_config, common);
      apply_threads(common, &cfg);
      SynthOptions so;
      if (!s_split.empty()) so.only_split = split_from_string(s_split);
      so.group = s_group;
      RunLog log = make_log(common, fs::path(s_out) / "synth.log.jsonl");
      const auto entries = read_manifest(s_manifest);
      log.event("synth_start", {{"entries", entries.size()}, {"config", config_to_json(cfg)}});
      const auto out = synthesize_dataset(entries, cfg.dataset, cfg.degrade, s_out, so);
      log.event("synth_done", {{"written", out.size()}});
      std::cout << (fs::path(s_out) / "manifest.jsonl").string() << "\n";
    } else if (manifest->parsed()) {
      const RunConfig cfg = load_config(m_config, common);
      std::vector<SourceTriple> triples;
      std::ifstream in(m_sources);
      if (!in) throw IoError("cannot open " + m_sources);
      std::string line;
      int lineno = 0;
      while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
          const auto j = nlohmann::json::parse(line);
          triples.push_back({j.at("id").get<std::string>(), j.at("rgb_path").get<std::string>(),
                             j.value("depth_path", ""), j.value("label_path", "")});
        } catch (const nlohmann::json::exception& ex) {
          throw IoError(m_sources + ":" + std::to_string(lineno) + ": " + ex.what());
        }
      }
      const auto entries = build_manifest(cfg.dataset, triples, cfg.splits, cfg.lens);
      write_manifest(entries, m_out);
      std::cout << m_out << "\n";
    } else if (toy->parsed()) {
      RunConfig cfg = load_config("", common);
      apply_threads(common, nullptr);
      toy_spec.seed = cfg.seed;
      toy_spec.sizes.train = toy_spec.count * 8 / 10;
      toy_spec.sizes.val = toy_spec.count / 10;
      toy_spec.sizes.test = toy_spec.count - toy_spec.sizes.train - toy_spec.sizes.val;
      toy_spec.dataset.image_height = toy_spec.dataset.image_width = toy_spec.hr_size;
      DegradeOpts opts;
      make_toy_dataset(toy_spec, opts, t_out);
      std::cout << (fs::path(t_out) / "manifest.jsonl").string() << "\n";
    } else if (trn->parsed()) {
      RunConfig cfg = load_config(r_config, common);
      apply_threads(common, &cfg);
      cfg.model.ablate_gia = cfg.model.ablate_gia || r_ablate_gia;
      if (r_ablate_aux) cfg.train.use_aux = false;
      if (!r_single.empty()) cfg.model.single_task = single_task_from_string(r_single);
      cfg.model.scale = cfg.dataset.scale_factor;
      cfg.model.sigma_max = cfg.dataset.sigma_max;
      RunLog log = make_log(common, fs::path(r_out) / "train.log.jsonl");
      log.event("config", config_to_json(cfg));
      const auto entries = read_manifest(r_manifest);
      const auto train_set = load_samples(entries, Split::kTrain, cfg.model.classes);
      auto val_set = load_samples(entries, Split::kVal, cfg.model.classes);
      if (val_set.empty()) val_set = load_samples(entries, Split::kTest, cfg.model.classes);
      CmosLite model(cfg.model, cfg.seed);
      const TrainResult r = train(model, train_set, val_set, cfg.train, r_out, &log);
      std::cout << r.best_psnr_ckpt.string() << "\n" << r.best_miou_ckpt.string() << "\n" << r.last_ckpt.string() << "\n";
    } else if (ev->parsed()) {
      write_json(tools::eval_dirs(e_pred, e_gt, e_kind, e_classes, e_sigma_max), e_report);
    } else if (est->parsed()) {
      apply_threads(common, nullptr);
      const CmosLite model = load_model(x_ckpt);
      const ImagePlane lr = load_image(x_image);
      const Estimate e = estimate(model, lr);
      fs::create_directories(x_out);
      const std::string stem = fs::path(x_image).stem().string();
      if (!e.blur.data.empty()) {
        const fs::path p = fs::path(x_out) / (stem + "_blur.pfm");
        save_float_map(e.blur, p);
        std::cout << p.string() << "\n";
      }
      if (!e.labels.data.empty()) {
        const fs::path p = fs::path(x_out) / (stem + "_labels.png");
        save_labels(e.labels, p);
        std::cout << p.string() << "\n";
      }
    } else if (gc->parsed()) {
      const auto report = tools::run_gradcheck_suite(g_module, common.seed.value_or(0));
      write_json(report, g_report);
      if (!report["passed"].get<bool>()) {
        std::cerr << "focalforge: gradcheck failed (max relative error " << report["max_rel_error"].get<double>()
                  << ")\n";
        return 1;
      }
    } else if (bn->parsed()) {
      b_opts.seed = common.seed.value_or(0);
      write_json(tools::run_bench(b_opts), b_report);
    }
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (char& ch : msg)
      if (ch == '\n') ch = ' ';
    std::cerr << "focalforge: error: " << msg << "\n";
    return 1;
  }
  return 0;
}
