#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path work_dir() {
  static const fs::path d = [] {
    fs::path p = fs::temp_directory_path() / "focalforge_test_cli";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return d;
}

CliRun run(const std::string& args) {
  const fs::path out = work_dir() / "stdout.txt", err = work_dir() / "stderr.txt";
  const std::string cmd = std::string("\"") + FOCALFORGE_CLI_PATH + "\" " + args + " >" + out.string() + " 2>" +
                          err.string();
  const int status = std::system(cmd.c_str());
  CliRun r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

int count_lines(const std::string& s) {
  int n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

}  // namespace

TEST(Cli, HelpListsSubcommands) {
  const CliRun r = run("--help");
  EXPECT_EQ(r.code, 0);
  for (const char* sub : {"synth", "manifest", "toydata", "train", "eval", "estimate", "gradcheck", "bench"})
    EXPECT_NE(r.out.find(sub), std::string::npos) << sub;
}

TEST(Cli, ErrorsAreOneLineWithExitOne) {
  const fs::path cfg = work_dir() / "bad.ini";
  std::ofstream(cfg) << "[degrade]\nscale_factor = 0\n";
  const CliRun r = run("synth --manifest nowhere.jsonl --out " + (work_dir() / "x").string() + " --config " +
                    cfg.string());
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(count_lines(r.err), 1) << r.err;
  EXPECT_NE(r.err.find("bad.ini:2:"), std::string::npos) << r.err;

  const CliRun m = run("eval --pred " + work_dir().string() + " --gt /nonexistent --kind blur");
  EXPECT_EQ(m.code, 1);
  EXPECT_EQ(count_lines(m.err), 1) << m.err;

  EXPECT_NE(run("eval --pred a --gt b --kind depth").code, 0);
}

TEST(Cli, BenchReportSchema) {
  const fs::path rep = work_dir() / "bench.json";
  const CliRun r = run("bench --width 48 --height 32 --kernel 9 --repeats 1 --report " + rep.string());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(slurp(rep));
  EXPECT_EQ(j.at("width"), 48);
  EXPECT_EQ(j.at("kernel_size"), 9);
  ASSERT_EQ(j.at("runs").size(), 6u);
  for (const auto& run : j.at("runs")) {
    EXPECT_TRUE(run.at("mode") == "exact" || run.at("mode") == "lut");
    EXPECT_GT(run.at("seconds").get<double>(), 0.0);
    EXPECT_GT(run.at("pixels_per_second").get<double>(), 0.0);
  }
  EXPECT_TRUE(j.at("lut_over_exact_speedup").is_number());
  EXPECT_TRUE(j.at("lut_thread_speedup").contains("4"));
}

TEST(Cli, GradcheckOps) {
  const fs::path rep = work_dir() / "gc.json";
  const CliRun r = run("gradcheck --module ops --report " + rep.string());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(slurp(rep));
  EXPECT_TRUE(j.at("passed").get<bool>());
  EXPECT_LT(j.at("max_rel_error").get<double>(), 1e-4);
}

TEST(Cli, ToyTrainEstimateEvalFlow) {
  const fs::path data = work_dir() / "toy", run_dir = work_dir() / "run", est = work_dir() / "est";
  CliRun r = run("toydata --out " + data.string() + " --count 10 --hr-size 64 --seed 3");
  ASSERT_EQ(r.code, 0) << r.err;
  const fs::path manifest = data / "manifest.jsonl";
  ASSERT_TRUE(fs::exists(manifest));
  EXPECT_EQ(count_lines(slurp(manifest)), 10);

  const fs::path cfg = work_dir() / "tiny.ini";
  std::ofstream(cfg) << "[model]\nwidths = 8, 8, 8, 8\nclasses = 4\n[gia]\nwindow = 4\nchannel_groups = 4\n"
                        "[train]\nepochs = 2\nwarmup = 1\nbatch = 4\ncrop = 16\n";
  r = run("train --manifest " + manifest.string() + " --config " + cfg.string() + " --out " + run_dir.string() +
          " --quiet");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(run_dir / "last.ckpt"));
  const std::string log = slurp(run_dir / "train.log.jsonl");
  EXPECT_NE(log.find("\"epoch\""), std::string::npos);

  fs::path lr_img;
  for (const auto& e : fs::directory_iterator(data / "lr")) {
    lr_img = e.path();
    break;
  }
  ASSERT_FALSE(lr_img.empty());
  r = run("estimate --image " + lr_img.string() + " --ckpt " + (run_dir / "last.ckpt").string() + " --out " +
          est.string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(est / (lr_img.stem().string() + "_blur.pfm")));
  EXPECT_TRUE(fs::exists(est / (lr_img.stem().string() + "_labels.png")));

  const fs::path rep = work_dir() / "eval.json";
  r = run("eval --pred " + (data / "blur").string() + " --gt " + (data / "blur").string() +
          " --kind blur --report " + rep.string());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(slurp(rep));
  EXPECT_EQ(j.at("count"), 10);
  EXPECT_DOUBLE_EQ(j.at("mean_psnr").get<double>(), 100.0);

  // Estimate outputs match ground truth through their _blur / _labels suffixes.
  const fs::path one = work_dir() / "gt_one";
  fs::create_directories(one / "blur");
  fs::create_directories(one / "labels");
  const std::string stem = lr_img.stem().string();
  fs::copy_file(data / "blur" / (stem + ".pfm"), one / "blur" / (stem + ".pfm"), fs::copy_options::overwrite_existing);
  fs::copy_file(data / "labels" / (stem + ".png"), one / "labels" / (stem + ".png"),
                fs::copy_options::overwrite_existing);
  r = run("eval --pred " + est.string() + " --gt " + (one / "blur").string() + " --kind blur --report " + rep.string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(nlohmann::json::parse(slurp(rep)).at("count"), 1);
  r = run("eval --pred " + est.string() + " --gt " + (one / "labels").string() + " --kind seg --classes 4 --report " +
          rep.string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(nlohmann::json::parse(slurp(rep)).at("count"), 1);
}
