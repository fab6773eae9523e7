#include "nfa/harness/cli.hpp"

#include <algorithm>
#include <optional>

#include <CLI11.hpp>

#include "nfa/attack.hpp"
#include "nfa/error.hpp"
#include "nfa/flow/train.hpp"
#include "nfa/harness/checkpoint.hpp"
#include "nfa/harness/config.hpp"
#include "nfa/harness/images.hpp"
#include "nfa/harness/report.hpp"
#include "nfa/io.hpp"

namespace nfa::harness {

using nlohmann::json;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<double> eps;
  std::optional<std::string> attack;
  std::optional<std::size_t> max_examples;
  bool defended = false;
};

RunConfig effective_config(const Options& o) {
  RunConfig cfg = o.config.empty() ? default_config() : load_config(o.config);
  if (o.seed) {
    cfg.seed = *o.seed;
    cfg.derive_seeds();
  }
  if (o.out) cfg.out = *o.out;
  if (o.eps) cfg.latent.eps = *o.eps;
  if (o.attack) cfg.kind = attack::attack_kind_from_string(*o.attack);
  if (o.max_examples) cfg.max_examples = *o.max_examples;
  if (o.defended) cfg.nes_profile = NesProfile::defended;
  cfg.validate();
  return cfg;
}

data::Dataset load_source(const RunConfig& cfg) {
  if (cfg.source == "idx") return data::load_idx(cfg.idx_images, cfg.idx_labels);
  return data::gen_shapes(cfg.shapes);
}

json trace_json(const std::vector<flow::EpochStats>& trace) {
  json out = json::array();
  for (const auto& s : trace) out.push_back({{"epoch", s.epoch}, {"nll", s.nll}, {"nll_per_dim", s.nll_per_dim}, {"lr", s.lr}});
  return out;
}

json trace_json(const std::vector<classifier::ClassifierEpoch>& trace) {
  json out = json::array();
  for (const auto& s : trace) out.push_back({{"epoch", s.epoch}, {"loss", s.loss}, {"train_accuracy", s.train_accuracy}});
  return out;
}

int cmd_gen_data(const RunConfig& cfg, std::ostream& out) {
  const OutputLayout lay{cfg.out};
  const auto all = load_source(cfg);
  auto [train, test] = data::split(all, cfg.train_fraction, derive_seed(cfg.seed, 6));
  data::save_dataset(train, lay.train_set());
  data::save_dataset(test, lay.test_set());
  out << "wrote " << train.size() << " training and " << test.size() << " test images to " << lay.train_set().parent_path()
      << "\n";
  return kExitOk;
}

int cmd_train_flow(const RunConfig& cfg, std::ostream& out) {
  const OutputLayout lay{cfg.out};
  auto train = data::load_dataset(lay.train_set());
  if (cfg.flow_train_count > 0 && cfg.flow_train_count < train.size()) {
    std::vector<std::size_t> idx(cfg.flow_train_count);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    train = train.subset(idx, data::SplitTag::train);
  }
  const auto result = flow::train_flow(train, cfg.flow, [&](const flow::EpochStats& s) {
    out << "epoch " << s.epoch << "  nll/dim " << s.nll_per_dim << "  lr " << s.lr << "\n";
  });
  json meta = {{"images", train.size()}, {"trace", trace_json(result.trace)}, {"diverged", result.diverged},
               {"config", cfg.to_json().at("flow")}, {"seed", cfg.flow.seed}};
  save_checkpoint(flow_checkpoint(result.model, meta), lay.flow());
  out << "wrote " << lay.flow() << " (" << result.model.parameter_count() << " parameters)\n";
  if (result.diverged) {
    out << "training diverged; kept the last finite epoch\n";
    return kExitFailure;
  }
  return kExitOk;
}

int cmd_train_classifier(const RunConfig& cfg, bool defended, std::ostream& out) {
  const OutputLayout lay{cfg.out};
  const auto train = data::load_dataset(lay.train_set());
  const auto test = data::load_dataset(lay.test_set());
  const auto result = defended ? classifier::pgd_adv_train(train, cfg.classifier, cfg.adv)
                               : classifier::train_classifier(train, cfg.classifier);
  const double acc = classifier::accuracy(result.model, test);
  json meta = {{"defended", defended}, {"test_accuracy", acc}, {"trace", trace_json(result.trace)},
               {"config", cfg.to_json().at("classifier")}, {"seed", cfg.classifier.seed}};
  save_checkpoint(classifier_checkpoint(result.model, meta), lay.classifier(defended));
  out << "wrote " << lay.classifier(defended) << "  test accuracy " << acc << "\n";
  return kExitOk;
}

struct AttackRun {
  attack::Evaluation ev;
  ReportPaths paths;
};

AttackRun run_attack(const RunConfig& cfg, attack::AttackKind kind, bool defended, const std::string& stage) {
  const OutputLayout lay{cfg.out};
  const auto test = data::load_dataset(lay.test_set());
  const auto clf = classifier_from_checkpoint(load_checkpoint(lay.classifier(defended)));
  std::optional<flow::FlowModel<float>> flow_model;
  if (kind == attack::AttackKind::flow) flow_model = flow_from_checkpoint(load_checkpoint(lay.flow()));

  auto ec = cfg.eval_config();
  ec.kind = kind;
  AttackRun run;
  run.ev = attack::evaluate(test, clf, flow_model ? &*flow_model : nullptr, ec);

  ReportInput in;
  in.attack = attack::to_string(kind);
  in.target = defended ? "defended" : "vanilla";
  in.config = cfg.to_json();
  in.config["attack"]["kind"] = in.attack;
  in.records = run.ev.records;
  in.skipped = run.ev.skipped;
  in.observations = {{"clean_accuracy", classifier::accuracy(clf, test)}};
  run.paths = emit_report(in, lay.report(stage, in.attack, defended));

  // Adversarial images in record order, labelled with the true class.
  const std::size_t d = test.image_size();
  std::vector<float> pixels;
  std::vector<std::uint32_t> labels;
  for (std::size_t k = 0; k < run.ev.records.size(); ++k) {
    const auto& img = run.ev.adversarial[k];
    if (img.size() == d)
      pixels.insert(pixels.end(), img.begin(), img.end());
    else
      pixels.insert(pixels.end(), test.image(run.ev.records[k].index).begin(), test.image(run.ev.records[k].index).end());
    labels.push_back(run.ev.records[k].label);
  }
  Tensor images({labels.size(), test.channels(), test.height(), test.width()}, std::move(pixels));
  data::save_dataset(data::Dataset(std::move(images), labels, test.classes(), data::SplitTag::test),
                     lay.adversarial(in.attack, defended));
  return run;
}

void print_summary(std::ostream& out, const std::string& name, const attack::Evaluation& ev, const ReportPaths& p) {
  const auto& a = ev.aggregates;
  out << name << ": success " << a.success_rate_percent << "% of " << a.examples << " (skipped " << ev.skipped << ")";
  if (a.avg_queries) out << ", avg queries " << *a.avg_queries << ", median " << *a.median_queries;
  out << "\n  report " << p.json << "\n";
}

int cmd_attack(const RunConfig& cfg, bool defended, std::ostream& out) {
  const auto run = run_attack(cfg, cfg.kind, defended, "attack");
  print_summary(out, attack::to_string(cfg.kind), run.ev, run.paths);
  return kExitOk;
}

int cmd_eval(const RunConfig& cfg, bool defended, bool attack_given, std::ostream& out) {
  const OutputLayout lay{cfg.out};
  std::vector<attack::AttackKind> kinds = {attack::AttackKind::flow, attack::AttackKind::nes, attack::AttackKind::pgd};
  if (attack_given) kinds = {cfg.kind};
  json table = json::array();
  for (const auto kind : kinds) {
    const auto run = run_attack(cfg, kind, defended, "eval");
    print_summary(out, attack::to_string(kind), run.ev, run.paths);
    table.push_back({{"attack", attack::to_string(kind)}, {"aggregates", aggregates_json(run.ev.aggregates)}});
  }
  json summary = {{"target", defended ? "defended" : "vanilla"}, {"attacks", table}, {"config", cfg.to_json()}};
  auto path = lay.root / "reports" / (std::string("eval_summary_") + (defended ? "defended" : "vanilla") + ".json");
  io::write_file_atomic(path, summary.dump(2) + "\n");
  out << "summary " << path << "\n";
  return kExitOk;
}

int cmd_sample(const RunConfig& cfg, std::ostream& out) {
  const OutputLayout lay{cfg.out};
  const auto model = flow_from_checkpoint(load_checkpoint(lay.flow()));
  Prng prng(derive_seed(cfg.seed, 7));
  const auto x = flow::sample(model, cfg.sample_count, cfg.sample_temperature, prng);
  const auto& im = model.image();
  require(im.channels == 1, "sample: PGM output supports single-channel images only");
  for (std::size_t r = 0; r < x.rows(); ++r) {
    char name[32];
    std::snprintf(name, sizeof name, "sample_%04zu.pgm", r);
    write_pgm(lay.samples() / name, x.row(r), im.width, im.height);
  }
  out << "wrote " << x.rows() << " samples to " << lay.samples() << "\n";
  return kExitOk;
}

int cmd_dump_images(const RunConfig& cfg, bool defended, std::ostream& out) {
  const OutputLayout lay{cfg.out};
  const std::string kind = attack::to_string(cfg.kind);
  const auto test = data::load_dataset(lay.test_set());
  const auto adv = data::load_dataset(lay.adversarial(kind, defended));
  auto report_path = lay.report("attack", kind, defended);
  report_path += ".json";
  const auto bytes = io::read_file(report_path);
  const json report = json::parse(bytes.begin(), bytes.end());
  const auto& records = report.at("records");
  require(records.size() == adv.size(), "dump-images: report and adversarial set disagree in length");
  require(test.channels() == 1, "dump-images: PGM output supports single-channel images only");

  // Successful examples first, then the rest, in record order.
  std::vector<std::size_t> order(records.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  std::stable_partition(order.begin(), order.end(), [&](std::size_t k) { return records[k].at("success").get<bool>(); });
  const std::size_t n = std::min(cfg.dump_count, order.size());
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = order[i];
    const std::size_t idx = records[k].at("index").get<std::size_t>();
    const auto prefix = lay.images(kind, defended) / ("example_" + std::to_string(idx));
    dump_images(test.image(idx), adv.image(k), test.width(), test.height(), prefix);
  }
  out << "wrote " << n << " image triplets to " << lay.images(kind, defended) << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Normalizing-flow black-box attack toolkit", "nfa"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "Config file ([section] key = value)");
    sub->add_option("--seed", o.seed, "Master seed");
    sub->add_option("--out", o.out, "Output directory");
  };
  auto attack_flags = [&](CLI::App* sub) {
    sub->add_option("--eps", o.eps, "Perturbation radius");
    sub->add_option("--attack", o.attack, "Attack kind")->check(CLI::IsMember({"flow", "nes", "pgd"}));
    sub->add_option("--max-examples", o.max_examples, "Number of correctly classified test images to attack");
    sub->add_flag("--defended", o.defended, "Target the adversarially trained classifier (NES defended profile)");
  };

  auto* gen = app.add_subcommand("gen-data", "Generate and split the dataset");
  auto* tflow = app.add_subcommand("train-flow", "Train the flow on the training split");
  auto* tclf = app.add_subcommand("train-classifier", "Train the target classifier");
  auto* atk = app.add_subcommand("attack", "Attack correctly classified test images and write a report");
  auto* ev = app.add_subcommand("eval", "Evaluate flow, NES and PGD attacks (or the one given by --attack)");
  auto* smp = app.add_subcommand("sample", "Draw images from the trained flow");
  auto* dump = app.add_subcommand("dump-images", "Write clean/adversarial/perturbation PGMs for an attack report");
  for (auto* s : {gen, tflow, tclf, atk, ev, smp, dump}) common(s);
  for (auto* s : {atk, ev, dump}) attack_flags(s);
  tclf->add_flag("--defended", o.defended, "Train with PGD adversarial examples");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "nfa: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }

  try {
    const RunConfig cfg = effective_config(o);
    if (gen->parsed()) return cmd_gen_data(cfg, out);
    if (tflow->parsed()) return cmd_train_flow(cfg, out);
    if (tclf->parsed()) return cmd_train_classifier(cfg, o.defended, out);
    if (atk->parsed()) return cmd_attack(cfg, o.defended, out);
    if (ev->parsed()) return cmd_eval(cfg, o.defended, o.attack.has_value(), out);
    if (smp->parsed()) return cmd_sample(cfg, out);
    if (dump->parsed()) return cmd_dump_images(cfg, o.defended, out);
  } catch (const std::exception& e) {
    err << "nfa: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace nfa::harness
