// Drives the installed binary end to end over a small synthetic corpus.
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

using namespace std;
namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / "brst_cli_test";

int run(const string& args, const string& log_name = "log.txt") {
  const string cmd = string(BRST_CLI_PATH) + " " + args + " > " + (kWork / log_name).string() + " 2>&1";
  return std::system(cmd.c_str());
}

string slurp(const fs::path& p) {
  ifstream in(p, ios::binary);
  return string(istreambuf_iterator<char>(in), istreambuf_iterator<char>());
}

size_t count_lines(const fs::path& p) {
  ifstream in(p);
  string line;
  size_t n = 0;
  while (getline(in, line)) ++n;
  return n;
}

}  // namespace

TEST_CASE("cli end to end: gen-corpus, train, decode, analyze, warm-start") {
  fs::remove_all(kWork);
  fs::create_directories(kWork);

  // corpus
  REQUIRE(run("gen-corpus --out " + (kWork / "corpus").string() + " --num-utts 12 --vocab 6 --seed 3") == 0);
  const string manifest = (kWork / "corpus" / "manifest.tsv").string();
  REQUIRE(fs::exists(manifest));

  // a couple of very short training runs (tiny model through the preset path)
  const string train_args = " --manifest " + manifest + " --steps 8 --batch 4 --warmup 20 --seed 1";
  REQUIRE(run("train --preset toy-BR --out " + (kWork / "br").string() + train_args) == 0);
  REQUIRE(fs::exists(kWork / "br" / "checkpoint_final.brst"));
  REQUIRE(fs::exists(kWork / "br" / "metrics.csv"));
  REQUIRE(fs::exists(kWork / "br" / "resolved_config.txt"));

  // resolved-config snapshot round trip: identical checkpoint bytes
  REQUIRE(run("train --config " + (kWork / "br" / "resolved_config.txt").string() + " --out " + (kWork / "br2").string() + " --manifest " + manifest) == 0);
  CHECK(slurp(kWork / "br" / "checkpoint_final.brst") == slurp(kWork / "br2" / "checkpoint_final.brst"));

  const string ckpt = (kWork / "br" / "checkpoint_final.brst").string();

  // all four decode methods
  for (const string method : {"cg", "cp", "att", "att-re"}) {
    REQUIRE(run("decode --checkpoint " + ckpt + " --manifest " + manifest + " --method " + method + " --out " + (kWork / "dec").string() + " --beam 5 --max-len 10") == 0);
    CHECK(fs::exists(kWork / "dec" / ("hyps_" + method + ".txt")));
    CHECK(fs::exists(kWork / "dec" / ("cer_" + method + ".csv")));
    CHECK(count_lines(kWork / "dec" / ("hyps_" + method + ".txt")) == 12);
  }

  // rescore weight 1.0 reproduces the CTC prefix top-1 file exactly
  REQUIRE(run("decode --checkpoint " + ckpt + " --manifest " + manifest + " --method att-re --rescore-weight 1.0 --out " + (kWork / "dec_w1").string() + " --beam 5 --max-len 10") == 0);
  CHECK(slurp(kWork / "dec_w1" / "hyps_att-re.txt") == slurp(kWork / "dec" / "hyps_cp.txt"));

  // evaluate the decode output against the manifest references
  REQUIRE(run("evaluate --manifest " + manifest + " --hyp " + (kWork / "dec" / "hyps_cp.txt").string() + " --out " + (kWork / "cer.csv").string()) == 0);
  CHECK(count_lines(kWork / "cer.csv") == 14);  // header + 12 utts + TOTAL

  // vertical analysis on the trained checkpoint
  REQUIRE(run("analyze --mode vertical --checkpoint " + ckpt + " --manifest " + manifest + " --out " + (kWork / "vert").string() + " --max-rows 256") == 0);
  CHECK(fs::exists(kWork / "vert" / "vertical.csv"));
  CHECK(fs::exists(kWork / "vert" / "vertical.svg"));
  CHECK(fs::exists(kWork / "vert" / "vertical_flags.csv"));

  // horizontal needs a second checkpoint
  REQUIRE(run("train --preset toy-BRA-E --out " + (kWork / "bra").string() + train_args) == 0);
  const string bra_ckpt = (kWork / "bra" / "checkpoint_final.brst").string();
  REQUIRE(run("analyze --mode horizontal --checkpoint " + ckpt + " --checkpoint-b " + bra_ckpt + " --manifest " + manifest + " --out " + (kWork / "horiz").string() + " --max-rows 256") == 0);
  CHECK(fs::exists(kWork / "horiz" / "horizontal.csv"));
  CHECK(fs::exists(kWork / "horiz" / "push_away.csv"));
  // 4 encoder push-away rows for the toy S1=4 adapters
  CHECK(count_lines(kWork / "horiz" / "push_away.csv") == 5);

  // warm start BR -> BRA-E with exactly 4 fresh toy adapters (8 components)
  REQUIRE(run("warm-start --source " + ckpt + " --preset toy-BRA-E --out " + (kWork / "warm.brst").string()) == 0);
  REQUIRE(fs::exists(kWork / "warm.brst.provenance.csv"));
  size_t fresh = 0;
  {
    ifstream prov(kWork / "warm.brst.provenance.csv");
    string line;
    while (getline(prov, line)) {
      if (line.find(",fresh") != string::npos) ++fresh;
    }
  }
  CHECK(fresh == 8);

  // the warm-started checkpoint trains without error via --resume
  REQUIRE(run("train --preset toy-BRA-E --out " + (kWork / "warm_train").string() + train_args + " --resume " + (kWork / "warm.brst").string()) == 0);
  CHECK(fs::exists(kWork / "warm_train" / "checkpoint_final.brst"));

  // count-params table
  REQUIRE(run("count-params --preset BRA-E --vocab 4233 --out " + (kWork / "params.csv").string(), "params_log.txt") == 0);
  CHECK(count_lines(kWork / "params.csv") == 10);
  CHECK(slurp(kWork / "params_log.txt").find("encoder_adapters") != string::npos);
}

TEST_CASE("cli error paths exit nonzero") {
  fs::create_directories(kWork);
  // missing manifest: nonzero exit, no partial outputs
  CHECK(run("train --preset toy-BR --manifest " + (kWork / "nope.tsv").string() + " --out " + (kWork / "never").string()) != 0);
  CHECK(!fs::exists(kWork / "never"));

  // unknown preset names the valid ones
  REQUIRE(run("gen-corpus --out " + (kWork / "c2").string() + " --num-utts 2 --vocab 3", "gen2.txt") == 0);
  CHECK(run("train --preset BRX --manifest " + (kWork / "c2" / "manifest.tsv").string() + " --out " + (kWork / "never2").string(), "err.txt") != 0);
  CHECK(slurp(kWork / "err.txt").find("valid presets") != string::npos);

  // unknown decode method
  CHECK(run("decode --checkpoint missing.brst --manifest " + (kWork / "c2" / "manifest.tsv").string() + " --method zz --out " + (kWork / "never3").string(), "err2.txt") != 0);
  CHECK(slurp(kWork / "err2.txt").find("valid: cg, cp, att, att-re") != string::npos);

  // empty manifest decodes to an empty file with exit 0
  {
    ofstream empty(kWork / "empty.tsv");
  }
  REQUIRE(run("gen-corpus --out " + (kWork / "c3").string() + " --num-utts 2 --vocab 3", "gen3.txt") == 0);
  REQUIRE(run("train --preset toy-BR --manifest " + (kWork / "c3" / "manifest.tsv").string() + " --out " + (kWork / "m3").string() + " --steps 2 --batch 2 --warmup 5", "t3.txt") == 0);
  CHECK(run("decode --checkpoint " + (kWork / "m3" / "checkpoint_final.brst").string() + " --manifest " + (kWork / "empty.tsv").string() + " --method cg --out " + (kWork / "d3").string(), "d3.txt") == 0);
  CHECK(fs::exists(kWork / "d3" / "hyps_cg.txt"));
  CHECK(fs::file_size(kWork / "d3" / "hyps_cg.txt") == 0);

  fs::remove_all(kWork);
}
