#include "nfa/harness/config.hpp"

#include <charconv>
#include <functional>
#include <map>
#include <sstream>

#include "nfa/error.hpp"
#include "nfa/io.hpp"

namespace nfa::harness {

std::string to_string(NesProfile p) { return p == NesProfile::vanilla ? "vanilla" : "defended"; }

NesProfile nes_profile_from_string(const std::string& s) {
  if (s == "vanilla") return NesProfile::vanilla;
  if (s == "defended") return NesProfile::defended;
  throw ContractViolation("unknown NES profile '" + s + "' (expected vanilla or defended)");
}

void RunConfig::derive_seeds() {
  shapes.seed = derive_seed(seed, 1);
  flow.seed = derive_seed(seed, 2);
  flow.arch.seed = derive_seed(seed, 3);
  classifier.seed = derive_seed(seed, 4);
  latent.seed = derive_seed(seed, 5);
}

void RunConfig::validate() const {
  require(source == "shapes" || source == "idx", "data.source must be shapes or idx");
  if (source == "idx") require(!idx_images.empty() && !idx_labels.empty(), "data.idx_images and data.idx_labels are required for source = idx");
  require(shapes.count > 0, "data.count must be positive");
  require(shapes.classes >= 2 && shapes.classes <= 4, "data.classes must be 2, 3 or 4");
  require(shapes.size >= 8 && shapes.size % 2 == 0, "data.size must be even and at least 8");
  require(shapes.noise_std >= 0.0, "data.noise_std must be non-negative");
  require(shapes.max_offset >= 0, "data.max_offset must be non-negative");
  require(train_fraction > 0.0 && train_fraction < 1.0, "data.train_fraction must lie in (0, 1)");

  require(flow.arch.hidden > 0, "flow.hidden must be positive");
  require(flow.arch.alpha > 0.0, "flow.alpha must be positive");
  require(flow.arch.delta > 0.0 && flow.arch.delta < 0.5, "flow.delta must lie in (0, 0.5)");
  require(flow.epochs > 0 && flow.batch_size > 0, "flow.epochs and flow.batch_size must be positive");
  require(flow.lr_initial > 0.0 && flow.lr_final > 0.0, "flow learning rates must be positive");

  require(classifier.hidden > 0, "classifier.hidden must be positive");
  require(classifier.epochs > 0 && classifier.batch_size > 0, "classifier.epochs and classifier.batch_size must be positive");
  require(classifier.lr > 0.0, "classifier.lr must be positive");
  require(adv.eps > 0.0 && adv.steps > 0, "classifier.adv_eps and classifier.adv_steps must be positive");

  latent.validate();
  nes().validate();
  require(pgd.steps > 0, "attack.pgd_steps must be positive");
  require(sample_count > 0, "io.sample_count must be positive");
  require(sample_temperature >= 0.0, "io.sample_temperature must be non-negative");
  require(!out.empty(), "io.out must not be empty");
}

attack::NesConfig RunConfig::nes() const {
  attack::NesConfig c = nes_profile == NesProfile::vanilla ? attack::NesConfig::vanilla() : attack::NesConfig::defended();
  if (nes_sigma) c.sigma = *nes_sigma;
  if (nes_samples) c.samples = *nes_samples;
  if (nes_lr) c.lr = *nes_lr;
  c.eps = latent.eps;
  c.norm = latent.norm;
  c.budget = latent.budget;
  c.seed = latent.seed;
  return c;
}

attack::EvalConfig RunConfig::eval_config() const {
  attack::EvalConfig e;
  e.kind = kind;
  e.latent = latent;
  e.nes = nes();
  e.pgd = pgd;
  e.pgd.eps = latent.eps;
  e.max_examples = max_examples;
  e.seed = latent.seed;
  return e;
}

nlohmann::json RunConfig::to_json() const {
  using nlohmann::json;
  const auto n = nes();
  return json{
      {"seed", seed},
      {"data",
       {{"source", source},
        {"idx_images", idx_images},
        {"idx_labels", idx_labels},
        {"count", shapes.count},
        {"classes", shapes.classes},
        {"size", shapes.size},
        {"noise_std", shapes.noise_std},
        {"max_offset", shapes.max_offset},
        {"train_fraction", train_fraction},
        {"flow_train_count", flow_train_count}}},
      {"flow",
       {{"hidden", flow.arch.hidden},
        {"depth", flow.arch.depth},
        {"high_res_blocks", flow.arch.high_res_blocks},
        {"low_res_blocks", flow.arch.low_res_blocks},
        {"fc_blocks", flow.arch.fc_blocks},
        {"alpha", flow.arch.alpha},
        {"delta", flow.arch.delta},
        {"slope", flow.arch.slope},
        {"epochs", flow.epochs},
        {"batch_size", flow.batch_size},
        {"lr_initial", flow.lr_initial},
        {"lr_final", flow.lr_final},
        {"dequantize", flow.dequantize}}},
      {"classifier",
       {{"hidden", classifier.hidden},
        {"depth", classifier.depth},
        {"epochs", classifier.epochs},
        {"batch_size", classifier.batch_size},
        {"lr", classifier.lr},
        {"slope", classifier.slope},
        {"adv_eps", adv.eps},
        {"adv_steps", adv.steps},
        {"adv_step_size", adv.step_size}}},
      {"attack",
       {{"kind", attack::to_string(kind)},
        {"eps", latent.eps},
        {"norm", attack::to_string(latent.norm)},
        {"budget", latent.budget},
        {"max_examples", max_examples},
        {"sigma", latent.sigma},
        {"samples", latent.samples},
        {"elites", latent.elites},
        {"max_iters", latent.max_iters},
        {"sigma_init", latent.sigma_init},
        {"covers_budget", latent.covers_budget()},
        {"nes_profile", to_string(nes_profile)},
        {"nes_sigma", n.sigma},
        {"nes_samples", n.samples},
        {"nes_lr", n.lr},
        {"pgd_steps", pgd.steps},
        {"pgd_step_size", pgd.step_size}}},
      {"io",
       {{"out", out},
        {"dump_count", dump_count},
        {"sample_count", sample_count},
        {"sample_temperature", sample_temperature}}},
  };
}

RunConfig default_config() {
  RunConfig c;
  c.derive_seeds();
  return c;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& v) {
  T out{};
  if constexpr (std::is_floating_point_v<T>) {
    std::size_t used = 0;
    try {
      out = static_cast<T>(std::stod(v, &used));
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != v.size()) throw ContractViolation("expected a number, got '" + v + "'");
  } else {
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || ptr != v.data() + v.size())
      throw ContractViolation("expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ContractViolation("expected true or false, got '" + v + "'");
}

using Setter = std::function<void(RunConfig&, const std::string&)>;

template <class T>
Setter num(T RunConfig::*field) {
  return [field](RunConfig& c, const std::string& v) { c.*field = parse_number<T>(v); };
}

#define NFA_NUM(expr) [](RunConfig& c, const std::string& v) { expr = parse_number<std::remove_reference_t<decltype(expr)>>(v); }

const std::map<std::string, std::map<std::string, Setter>>& setters() {
  static const std::map<std::string, std::map<std::string, Setter>> table = {
      {"data",
       {{"seed", num(&RunConfig::seed)},
        {"source", [](RunConfig& c, const std::string& v) { c.source = v; }},
        {"idx_images", [](RunConfig& c, const std::string& v) { c.idx_images = v; }},
        {"idx_labels", [](RunConfig& c, const std::string& v) { c.idx_labels = v; }},
        {"count", NFA_NUM(c.shapes.count)},
        {"classes", NFA_NUM(c.shapes.classes)},
        {"size", NFA_NUM(c.shapes.size)},
        {"noise_std", NFA_NUM(c.shapes.noise_std)},
        {"max_offset", NFA_NUM(c.shapes.max_offset)},
        {"train_fraction", NFA_NUM(c.train_fraction)},
        {"flow_train_count", NFA_NUM(c.flow_train_count)}}},
      {"flow",
       {{"hidden", NFA_NUM(c.flow.arch.hidden)},
        {"depth", NFA_NUM(c.flow.arch.depth)},
        {"high_res_blocks", NFA_NUM(c.flow.arch.high_res_blocks)},
        {"low_res_blocks", NFA_NUM(c.flow.arch.low_res_blocks)},
        {"fc_blocks", NFA_NUM(c.flow.arch.fc_blocks)},
        {"alpha", NFA_NUM(c.flow.arch.alpha)},
        {"delta", NFA_NUM(c.flow.arch.delta)},
        {"slope", NFA_NUM(c.flow.arch.slope)},
        {"epochs", NFA_NUM(c.flow.epochs)},
        {"batch_size", NFA_NUM(c.flow.batch_size)},
        {"lr_initial", NFA_NUM(c.flow.lr_initial)},
        {"lr_final", NFA_NUM(c.flow.lr_final)},
        {"dequantize", [](RunConfig& c, const std::string& v) { c.flow.dequantize = parse_bool(v); }}}},
      {"classifier",
       {{"hidden", NFA_NUM(c.classifier.hidden)},
        {"depth", NFA_NUM(c.classifier.depth)},
        {"epochs", NFA_NUM(c.classifier.epochs)},
        {"batch_size", NFA_NUM(c.classifier.batch_size)},
        {"lr", NFA_NUM(c.classifier.lr)},
        {"slope", NFA_NUM(c.classifier.slope)},
        {"adv_eps", NFA_NUM(c.adv.eps)},
        {"adv_steps", NFA_NUM(c.adv.steps)},
        {"adv_step_size", NFA_NUM(c.adv.step_size)}}},
      {"attack",
       {{"kind", [](RunConfig& c, const std::string& v) { c.kind = attack::attack_kind_from_string(v); }},
        {"eps", NFA_NUM(c.latent.eps)},
        {"norm", [](RunConfig& c, const std::string& v) { c.latent.norm = attack::norm_from_string(v); }},
        {"budget", NFA_NUM(c.latent.budget)},
        {"max_examples", NFA_NUM(c.max_examples)},
        {"sigma", NFA_NUM(c.latent.sigma)},
        {"samples", NFA_NUM(c.latent.samples)},
        {"elites", NFA_NUM(c.latent.elites)},
        {"max_iters", NFA_NUM(c.latent.max_iters)},
        {"sigma_init", NFA_NUM(c.latent.sigma_init)},
        {"nes_profile", [](RunConfig& c, const std::string& v) { c.nes_profile = nes_profile_from_string(v); }},
        {"nes_sigma", [](RunConfig& c, const std::string& v) { c.nes_sigma = parse_number<double>(v); }},
        {"nes_samples", [](RunConfig& c, const std::string& v) { c.nes_samples = parse_number<std::size_t>(v); }},
        {"nes_lr", [](RunConfig& c, const std::string& v) { c.nes_lr = parse_number<double>(v); }},
        {"pgd_steps", NFA_NUM(c.pgd.steps)},
        {"pgd_step_size", NFA_NUM(c.pgd.step_size)}}},
      {"io",
       {{"out", [](RunConfig& c, const std::string& v) { c.out = v; }},
        {"dump_count", NFA_NUM(c.dump_count)},
        {"sample_count", NFA_NUM(c.sample_count)},
        {"sample_temperature", NFA_NUM(c.sample_temperature)}}},
  };
  return table;
}

#undef NFA_NUM

}  // namespace

RunConfig parse_config(const std::string& text, const std::string& source) {
  RunConfig cfg = default_config();
  std::istringstream in(text);
  std::string line;
  std::string section;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& msg) { throw ParseError(source + ":" + std::to_string(lineno) + ": " + msg); };
  const auto& table = setters();
  bool seed_set = false;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail("unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (!table.contains(section)) fail("unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail("expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (section.empty()) fail("key '" + key + "' appears before any [section]");
    const auto& keys = table.at(section);
    const auto it = keys.find(key);
    if (it == keys.end()) fail("unknown key '" + key + "' in [" + section + "]");
    if (value.empty()) fail("missing value for '" + key + "'");
    try {
      it->second(cfg, value);
    } catch (const ContractViolation& e) {
      fail(section + "." + key + ": " + e.what());
    }
    if (section == "data" && key == "seed") seed_set = true;
  }
  if (seed_set) cfg.derive_seeds();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  return parse_config(std::string(bytes.begin(), bytes.end()), path.string());
}

}  // namespace nfa::harness
