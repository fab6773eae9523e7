#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "nfa/flow/model.hpp"
#include "nfa/harness/checkpoint.hpp"
#include "nfa/harness/cli.hpp"
#include "nfa/harness/config.hpp"
#include "nfa/harness/images.hpp"
#include "nfa/harness/report.hpp"
#include "nfa/io.hpp"

using namespace nfa;
using namespace nfa::harness;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "nfa_test_harness";
  fs::create_directories(dir);
  return dir / name;
}

int cli(const std::vector<std::string>& args, std::string* out_text = nullptr, std::string* err_text = nullptr) {
  std::ostringstream out, err;
  const int rc = run_cli(args, out, err);
  if (out_text) *out_text = out.str();
  if (err_text) *err_text = err.str();
  return rc;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

flow::FlowModel<float> small_flow(std::uint64_t seed) {
  flow::FlowArchitecture arch;
  arch.hidden = 8;
  arch.high_res_blocks = 2;
  arch.low_res_blocks = 2;
  arch.fc_blocks = 2;
  arch.seed = seed;
  auto m = flow::build_flow<float>(arch);
  Prng prng(seed + 1);
  m.randomize(prng, 0.3);
  return m;
}

const char* kTinyConfig = R"(# small end-to-end run
[data]
count = 150
flow_train_count = 0

[flow]
hidden = 8
epochs = 1
high_res_blocks = 1
low_res_blocks = 1
fc_blocks = 1

[classifier]
epochs = 5
adv_steps = 2

[attack]
budget = 120
max_examples = 2
pgd_steps = 5

[io]
sample_count = 3
dump_count = 2
)";

}  // namespace

TEST_CASE("config defaults and parsing") {
  const auto d = default_config();
  CHECK(d.latent.budget == 10000);
  CHECK(d.latent.eps == doctest::Approx(8.0 / 255.0));
  CHECK(d.nes().sigma == 0.1);
  CHECK(d.flow.batch_size == 64);
  CHECK(d.classifier.hidden == 64);

  const auto c = parse_config("[attack]\neps = 0.1  # wide\nnorm = 2\nnes_profile = defended\n[data]\nseed = 5\n");
  CHECK(c.latent.eps == 0.1);
  CHECK(c.latent.norm == attack::Norm::l2);
  CHECK(c.nes().sigma == 0.001);
  CHECK(c.nes().samples == 100);
  CHECK(c.seed == 5);
  CHECK(c.shapes.seed == derive_seed(5, 1));
  CHECK(c.eval_config().nes.eps == 0.1);

  const auto o = parse_config("[attack]\nnes_profile = defended\nnes_sigma = 0.01\n");
  CHECK(o.nes().sigma == 0.01);
  CHECK(o.nes().samples == 100);
}

TEST_CASE("config errors name the line") {
  try {
    parse_config("[data]\ncount = 10\nbogus = 3\n", "run.ini");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("run.ini:3") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_config("[nowhere]\n"), ParseError);
  CHECK_THROWS_AS(parse_config("[flow]\nepochs = ten\n"), ParseError);
  CHECK_THROWS_AS(parse_config("[flow]\nepochs\n"), ParseError);
  CHECK_THROWS_AS(parse_config("count = 3\n"), ParseError);
  // Range checks run after command-line overrides are applied.
  CHECK_NOTHROW(parse_config("[attack]\neps = -1\n"));
  CHECK_THROWS_AS(parse_config("[attack]\neps = -1\n").validate(), ContractViolation);
}

TEST_CASE("config json is stable") {
  CHECK(default_config().to_json() == default_config().to_json());
  CHECK(default_config().to_json().at("attack").at("budget") == 10000);
}

TEST_CASE("checkpoint encoding") {
  Checkpoint ck;
  ck.descriptor = {{"kind", "test"}, {"n", 3}};
  ck.payload = {1.0f, -2.5f, 3.25f};
  const auto bytes = encode_checkpoint(ck);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "NFCK");
  const auto back = decode_checkpoint(bytes);
  CHECK(back.descriptor == ck.descriptor);
  CHECK(back.payload == ck.payload);
  CHECK(encode_checkpoint(back) == bytes);

  auto flipped = bytes;
  flipped[flipped.size() - 2] ^= 0x40;
  CHECK_THROWS_AS(decode_checkpoint(flipped), ParseError);
  auto shortened = bytes;
  shortened.pop_back();
  CHECK_THROWS_AS(decode_checkpoint(shortened), ParseError);
  auto longer = bytes;
  longer.push_back(0);
  CHECK_THROWS_AS(decode_checkpoint(longer), ParseError);
  auto version = bytes;
  version[4] = 9;
  CHECK_THROWS_AS(decode_checkpoint(version), ParseError);
}

TEST_CASE("flow checkpoint round trip") {
  const auto model = small_flow(3);
  const auto path = scratch("flow.nfck");
  save_checkpoint(flow_checkpoint(model, {{"note", "unit"}}), path);
  const auto first = io::read_file(path);
  const auto loaded = flow_from_checkpoint(load_checkpoint(path));
  save_checkpoint(flow_checkpoint(loaded, {{"note", "unit"}}), path);
  CHECK(io::read_file(path) == first);

  Prng prng(4);
  Matrix<float> x({5, 64});
  for (auto& v : x.values()) v = static_cast<float>(prng.uniform(0.02, 0.98));
  const auto a = flow::nll(model, x);
  const auto b = flow::nll(loaded, x);
  CHECK(a == b);
  CHECK(load_checkpoint(path).descriptor.at("training").at("note") == "unit");

  auto bytes = first;
  bytes[bytes.size() / 2 + 40] ^= 0x01;
  CHECK_THROWS_AS(decode_checkpoint(bytes), ParseError);
  CHECK_THROWS_AS(classifier_from_checkpoint(load_checkpoint(path)), ParseError);
}

TEST_CASE("classifier checkpoint round trip") {
  Prng prng(5);
  auto net = Mlp<float>::make(64, 16, 2, 3, Activation::leaky_relu);
  net.init(prng, false);
  const classifier::ClassifierModel m(std::move(net), 3);
  const auto bytes = encode_checkpoint(classifier_checkpoint(m));
  const auto back = classifier_from_checkpoint(decode_checkpoint(bytes));
  CHECK(encode_checkpoint(classifier_checkpoint(back)) == bytes);
  std::vector<float> x(64, 0.3f);
  CHECK(back.logprobs(x) == m.logprobs(x));
}

TEST_CASE("report statistics and files") {
  ReportInput in;
  in.attack = "flow";
  std::vector<attack::ExampleRecord> recs(3);
  const std::size_t q[] = {100, 300, 200};
  for (std::size_t i = 0; i < 3; ++i) {
    recs[i].index = i;
    recs[i].queries = q[i];
    recs[i].success = i != 1;
  }
  in.records = recs;
  in.skipped = 4;
  const auto doc = make_report(in, "2026-01-01T00:00:00Z");
  CHECK(doc.at("aggregates").at("success_rate_percent") == 66.67);
  CHECK(doc.at("aggregates").at("avg_queries") == 150.0);
  CHECK(doc.at("aggregates").at("median_queries") == 150.0);
  CHECK(doc.at("run").at("skipped_misclassified") == 4);
  CHECK(doc.at("metadata").at("timestamp") == "2026-01-01T00:00:00Z");
  CHECK_NOTHROW(verify_aggregates(doc));

  auto tampered = doc;
  tampered["aggregates"]["successes"] = 3;
  CHECK_THROWS_AS(verify_aggregates(tampered), NumericError);

  for (auto& r : in.records) r.success = true;
  const auto all = make_report(in, "t");
  CHECK(all.at("aggregates").at("avg_queries") == 200.0);
  CHECK(all.at("aggregates").at("median_queries") == 200.0);

  const auto csv = report_csv(in.records);
  CHECK(csv.rfind("index,label,success,queries,final_loss,norm\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);

  const auto paths = emit_report(in, scratch("reports") / "attack_flow_vanilla");
  CHECK(fs::exists(paths.json));
  CHECK(fs::exists(paths.csv));
  CHECK(read_json(paths.json).at("aggregates") == all.at("aggregates"));
}

TEST_CASE("pgm output") {
  CHECK(to_byte(0.5) == 128);
  CHECK(to_byte(-1.0) == 0);
  CHECK(to_byte(2.0) == 255);

  const std::vector<float> clean{0.0f, 0.25f, 0.5f, 1.0f};
  const auto same = magnify_perturbation(clean, clean);
  for (float v : same) CHECK(to_byte(v) == 128);
  const std::vector<float> adv{0.1f, 0.25f, 0.4f, 1.0f};
  const auto mag = magnify_perturbation(clean, adv);
  CHECK(mag[0] == doctest::Approx(1.0f));
  CHECK(mag[2] == doctest::Approx(0.0f));
  CHECK(kPerturbationGain == 5.0);

  const auto path = scratch("img.pgm");
  const std::vector<float> px{0.0f, 0.2f, 0.7f, 1.3f, -0.1f, 0.5f};
  write_pgm(path, px, 3, 2);
  const auto img = read_pgm(path);
  CHECK(img.width == 3);
  CHECK(img.height == 2);
  for (std::size_t i = 0; i < px.size(); ++i) CHECK(img.pixels[i] == to_byte(px[i]));
  const auto head = io::read_file(path);
  CHECK(std::string(head.begin(), head.begin() + 2) == "P5");

  const auto prefix = scratch("dump") / "ex";
  dump_images(clean, clean, 2, 2, prefix);
  const auto pert = read_pgm(prefix.string() + "_perturbation.pgm");
  for (auto b : pert.pixels) CHECK(b == 128);
  CHECK(fs::exists(prefix.string() + "_clean.pgm"));
  CHECK(fs::exists(prefix.string() + "_adv.pgm"));
}

TEST_CASE("cli usage errors") {
  std::string err;
  CHECK(cli({}, nullptr, &err) == kExitUsage);
  CHECK(cli({"launch"}) == kExitUsage);
  CHECK(cli({"gen-data", "--frobnicate"}) == kExitUsage);
  CHECK(cli({"attack", "--attack", "square"}) == kExitUsage);
  CHECK(cli({"--help"}) == kExitOk);
  const auto cfg = scratch("bad.ini");
  io::write_file_atomic(cfg, std::string("[data]\nnope = 1\n"));
  CHECK(cli({"gen-data", "--config", cfg.string(), "--out", scratch("bad").string()}, nullptr, &err) == kExitFailure);
  CHECK(err.find("bad.ini:2") != std::string::npos);
  CHECK(cli({"attack", "--out", scratch("empty").string()}) == kExitFailure);
}

TEST_CASE("gen-data is deterministic") {
  const auto a = scratch("gen_a"), b = scratch("gen_b");
  fs::remove_all(a);
  fs::remove_all(b);
  REQUIRE(cli({"gen-data", "--seed", "7", "--out", a.string()}) == kExitOk);
  REQUIRE(cli({"gen-data", "--seed", "7", "--out", b.string()}) == kExitOk);
  const OutputLayout la{a}, lb{b};
  CHECK(io::read_file(la.train_set()) == io::read_file(lb.train_set()));
  CHECK(io::read_file(la.test_set()) == io::read_file(lb.test_set()));
  const auto c = scratch("gen_c");
  REQUIRE(cli({"gen-data", "--seed", "8", "--out", c.string()}) == kExitOk);
  CHECK(io::read_file(la.train_set()) != io::read_file(OutputLayout{c}.train_set()));
}

TEST_CASE("tiny pipeline through the command line") {
  const auto root = scratch("pipeline");
  fs::remove_all(root);
  const auto cfg = scratch("tiny.ini");
  io::write_file_atomic(cfg, std::string(kTinyConfig));
  const std::vector<std::string> common{"--config", cfg.string(), "--out", root.string(), "--seed", "3"};
  auto run = [&](std::vector<std::string> args) {
    args.insert(args.end(), common.begin(), common.end());
    std::string out, err;
    const int rc = cli(args, &out, &err);
    INFO(out << err);
    return rc;
  };
  const OutputLayout lay{root};
  REQUIRE(run({"gen-data"}) == kExitOk);
  REQUIRE(run({"train-flow"}) == kExitOk);
  REQUIRE(run({"train-classifier"}) == kExitOk);
  REQUIRE(run({"train-classifier", "--defended"}) == kExitOk);
  CHECK(fs::exists(lay.flow()));
  CHECK(fs::exists(lay.classifier(true)));

  REQUIRE(run({"attack", "--attack", "flow", "--eps", "0.031373"}) == kExitOk);
  const auto rep = read_json(lay.report("attack", "flow", false).string() + ".json");
  CHECK(rep.at("config").at("attack").at("eps") == 0.031373);
  CHECK(rep.at("config").at("attack").at("kind") == "flow");
  CHECK(rep.at("run").at("target") == "vanilla");
  CHECK_NOTHROW(verify_aggregates(rep));
  for (const auto& r : rep.at("records")) CHECK(r.at("queries").get<std::size_t>() <= 120);

  REQUIRE(run({"eval", "--attack", "nes", "--defended"}) == kExitOk);
  const auto nes = read_json(lay.report("eval", "nes", true).string() + ".json");
  CHECK(nes.at("config").at("attack").at("nes_sigma") == 0.001);
  CHECK(nes.at("config").at("attack").at("nes_samples") == 100);
  CHECK(nes.at("run").at("target") == "defended");
  CHECK(fs::exists(root / "reports" / "eval_summary_defended.json"));

  REQUIRE(run({"sample"}) == kExitOk);
  CHECK(fs::exists(lay.samples() / "sample_0002.pgm"));
  REQUIRE(run({"dump-images"}) == kExitOk);
  CHECK(fs::exists(lay.images("flow", false)));
}
