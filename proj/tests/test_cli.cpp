#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string out;  // stdout and stderr interleaved
};

RunResult run_cli(const std::string& args, const std::string& env = "VOLUMIX_THREADS=2") {
  const std::string cmd = env + " " + std::string(VOLUMIX_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  RunResult r;
  char buf[4096];
  size_t n = 0;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

struct TempDir {
  fs::path path;
  TempDir() {
    static std::atomic<int> counter{0};
    path = fs::path("/tmp") /
           ("volumix_cli_" + std::to_string(getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string str(const std::string& leaf) const { return (path / leaf).string(); }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) lines.push_back(line);
  return lines;
}

std::string first_value(const std::string& out, const std::string& key) {
  for (const auto& line : lines_of(out)) {
    if (line.rfind(key + "=", 0) == 0) return line.substr(key.size() + 1);
  }
  return {};
}

// Shared tiny dataset + model flags keep the subprocess runs fast.
const char* kTinyGen =
    "--extent-d 16 --extent-h 16 --extent-w 16 --roi-frac-lo 0.01 --roi-frac-hi 0.06 "
    "--n-train 2 --n-val 1 --n-test 1 --seed 3";
const char* kTinyModel =
    "--variant mambaout --stem-channels 4 --channels 4,8 --stage-depths 1,1 "
    "--state-dim 2 --window 2 --heads 2";
const char* kTinyTrain = "--epochs 2 --val-interval 1 --seed 3";

}  // namespace

TEST_CASE("help screens list the full command surface") {
  auto top = run_cli("--help");
  CHECK(top.code == 0);
  for (const char* sub : {"gen-data", "train", "eval", "gradcheck", "oracle-check", "bench",
                          "compare", "report"}) {
    CHECK(top.out.find(sub) != std::string::npos);
  }
  auto sub = run_cli("bench --help");
  CHECK(sub.code == 0);
  CHECK(sub.out.find("--lengths") != std::string::npos);
  CHECK(sub.out.find("--kernel") != std::string::npos);
}

TEST_CASE("unknown commands and flags exit 1 without side effects") {
  CHECK(run_cli("frobnicate").code == 1);
  CHECK(run_cli("").code == 1);  // a subcommand is required

  TempDir td;
  auto r = run_cli("gen-data --out " + td.str("ds") + " --frobnicate 1");
  CHECK(r.code == 1);
  CHECK_FALSE(fs::exists(td.str("ds")));  // rejected before any work
}

TEST_CASE("every command prints the seed and config digest first") {
  auto r = run_cli("oracle-check --cases 2 --seed 5");
  REQUIRE(r.code == 0);
  auto lines = lines_of(r.out);
  REQUIRE(!lines.empty());
  CHECK(lines[0].rfind("seed=5 config=", 0) == 0);
  CHECK(lines[0].size() == std::string("seed=5 config=").size() + 16);  // 64-bit hex digest
}

TEST_CASE("the generate, train, evaluate chain works end to end") {
  TempDir td;
  auto gen = run_cli("gen-data --out " + td.str("ds") + " " + kTinyGen);
  REQUIRE(gen.code == 0);
  const std::string manifest = first_value(gen.out, "manifest");
  REQUIRE(!manifest.empty());
  CHECK(fs::exists(manifest));
  CHECK(first_value(gen.out, "volumes") == "4");

  auto tr = run_cli("train --manifest " + manifest + " --out " + td.str("run") + " " +
                    kTinyModel + " " + kTinyTrain);
  REQUIRE(tr.code == 0);
  const std::string ckpt = first_value(tr.out, "ckpt");
  REQUIRE(!ckpt.empty());
  CHECK(fs::exists(ckpt));
  CHECK(fs::exists(first_value(tr.out, "log")));
  CHECK(!first_value(tr.out, "best_val_dsc").empty());

  auto ev = run_cli("eval --ckpt " + ckpt + " --manifest " + manifest + " --split test");
  REQUIRE(ev.code == 0);
  CHECK(ev.out.find("variant,class,dsc,miou,nsd,tau_mm") != std::string::npos);
  CHECK(ev.out.find("mambaout,mean,") != std::string::npos);

  // ground truth offered as predictions scores perfectly on every metric
  auto self = run_cli("eval --pred-manifest " + manifest + " --manifest " + manifest +
                      " --split test");
  REQUIRE(self.code == 0);
  CHECK(self.out.find("pred,mean,1.000000,1.000000,1.000000") != std::string::npos);
}

TEST_CASE("identical seeds reproduce identical artifacts") {
  TempDir td;
  auto g1 = run_cli("gen-data --out " + td.str("a") + " " + kTinyGen);
  auto g2 = run_cli("gen-data --out " + td.str("b") + " " + kTinyGen);
  REQUIRE(g1.code == 0);
  REQUIRE(g2.code == 0);
  int compared = 0;
  for (const auto& entry : fs::directory_iterator(td.str("a"))) {
    if (entry.path().extension() != ".volx") continue;
    CHECK(slurp(entry.path().string()) ==
          slurp((td.path / "b" / entry.path().filename()).string()));
    ++compared;
  }
  CHECK(compared == 8);  // image + labels for each of 4 volumes

  const std::string manifest = first_value(g1.out, "manifest");
  const std::string train_args = "train --manifest " + manifest + " " + std::string(kTinyModel) +
                                 " " + kTinyTrain + " --out ";
  auto t1 = run_cli(train_args + td.str("r1"));
  auto t2 = run_cli(train_args + td.str("r2"));
  REQUIRE(t1.code == 0);
  REQUIRE(t2.code == 0);
  CHECK(slurp(first_value(t1.out, "ckpt")) == slurp(first_value(t2.out, "ckpt")));
  CHECK(slurp(first_value(t1.out, "log")) == slurp(first_value(t2.out, "log")));
}

TEST_CASE("gradcheck runs one module and rejects unknown names") {
  auto ok = run_cli("gradcheck --module fue --seed 1");
  CHECK(ok.code == 0);
  CHECK(ok.out.find("fue") != std::string::npos);
  CHECK(ok.out.find("PASS") != std::string::npos);
  CHECK(ok.out.find("FAIL") == std::string::npos);

  CHECK(run_cli("gradcheck --module warp").code == 1);
}

TEST_CASE("bench emits one CSV row per requested length") {
  auto r = run_cli("bench --kernel scan --lengths 8,16 --min-ms 1");
  REQUIRE(r.code == 0);
  auto lines = lines_of(r.out);
  REQUIRE(lines.size() == 4);  // header line, CSV header, two rows
  CHECK(lines[1] == "kernel,L,N,d,reps,ns_per_call,checksum");
  CHECK(lines[2].rfind("scan,8,", 0) == 0);
  CHECK(lines[3].rfind("scan,16,", 0) == 0);

  CHECK(run_cli("bench --kernel warp").code == 1);
  CHECK(run_cli("bench --lengths 1").code == 1);  // lengths must be at least 2
}

TEST_CASE("missing inputs are data errors, missing flags are usage errors") {
  TempDir td;
  CHECK(run_cli("train --out " + td.str("x")).code == 1);    // no manifest given
  CHECK(run_cli("eval --manifest m.tsv").code == 1);         // neither --ckpt nor --pred-manifest
  CHECK(run_cli("train --manifest " + td.str("none.tsv") + " --out " + td.str("x")).code == 3);
  CHECK(run_cli("eval --ckpt " + td.str("none.ckpt") + " --manifest " + td.str("none.tsv"))
            .code == 3);
  CHECK(run_cli("report --in " + td.str("none.csv")).code == 3);
}

TEST_CASE("config files feed commands and flags override them") {
  TempDir td;
  std::ofstream(td.str("run.cfg")) << "# tiny run\nextent_d = 16\nextent_h = 16\n";

  // Same effective config => same digest, whether from file or flags.
  auto from_file = run_cli("gen-data --out " + td.str("a") + " --config " + td.str("run.cfg") +
                           " --n-train 1 --n-val 1 --n-test 1");
  auto from_flags = run_cli("gen-data --out " + td.str("b") +
                            " --extent-d 16 --extent-h 16 --n-train 1 --n-val 1 --n-test 1");
  REQUIRE(from_file.code == 0);
  REQUIRE(from_flags.code == 0);
  CHECK(lines_of(from_file.out)[0] == lines_of(from_flags.out)[0]);

  // A flag wins over the file value for the same key.
  auto overridden = run_cli("gen-data --out " + td.str("c") + " --config " + td.str("run.cfg") +
                            " --extent-d 24 --n-train 1 --n-val 1 --n-test 1");
  REQUIRE(overridden.code == 0);
  CHECK(lines_of(overridden.out)[0] != lines_of(from_file.out)[0]);

  // Unknown keys fail with the offending file location, exit 3.
  std::ofstream(td.str("bad.cfg")) << "extent_d = 16\nbogus = 1\n";
  auto bad = run_cli("gen-data --out " + td.str("d") + " --config " + td.str("bad.cfg"));
  CHECK(bad.code == 3);
  CHECK(bad.out.find("bad.cfg:2") != std::string::npos);
  CHECK_FALSE(fs::exists(td.str("d")));
}

TEST_CASE("worker count comes from the environment and is validated") {
  auto r1 = run_cli("oracle-check --cases 1", "VOLUMIX_THREADS=1");
  auto r4 = run_cli("oracle-check --cases 1", "VOLUMIX_THREADS=4");
  REQUIRE(r1.code == 0);
  REQUIRE(r4.code == 0);
  // The digest covers the worker count: reruns are attributable.
  CHECK(lines_of(r1.out)[0] != lines_of(r4.out)[0]);

  CHECK(run_cli("oracle-check --cases 1", "VOLUMIX_THREADS=0").code == 1);
  CHECK(run_cli("oracle-check --cases 1", "VOLUMIX_THREADS=zip").code == 1);
}

TEST_CASE("compare writes the grid and report reads it back") {
  TempDir td;
  auto gen = run_cli("gen-data --out " + td.str("ds") + " " + kTinyGen);
  REQUIRE(gen.code == 0);
  const std::string manifest = first_value(gen.out, "manifest");

  auto cp = run_cli("compare --manifest " + manifest + " --out " + td.str("cmp") + " " +
                    kTinyModel + " --epochs 1 --val-interval 1 --seed 3");
  REQUIRE(cp.code == 0);
  for (const char* v : {"tsmamba", "tshydra", "mamba_swin", "mambaout"}) {
    CHECK(cp.out.find(v) != std::string::npos);
    CHECK(fs::exists(td.str("cmp") + "/" + v + ".ckpt"));
  }
  REQUIRE(fs::exists(td.str("cmp") + "/compare.csv"));
  CHECK(lines_of(slurp(td.str("cmp") + "/compare.csv")).size() == 5);

  auto rp = run_cli("report --in " + td.str("cmp") + "/compare.csv");
  REQUIRE(rp.code == 0);
  CHECK(rp.out.find("mambaout") != std::string::npos);
  CHECK(rp.out.find("params") != std::string::npos);
}
