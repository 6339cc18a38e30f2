#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

#include "fedsim/error.hpp"
#include "fedsim/experiments.hpp"

namespace fedsim {
namespace {

namespace pt = boost::property_tree;

template <typename T>
T value_of(const std::string& section, const std::string& key, const pt::ptree& node) {
  auto v = node.get_value_optional<T>();
  if (!v) {
    throw UsageError(fmt::format("[{}] {}: cannot parse '{}'", section, key, node.data()));
  }
  return *v;
}

bool bool_of(const std::string& section, const std::string& key, const pt::ptree& node) {
  const std::string& s = node.data();
  if (s == "true" || s == "1" || s == "on" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "off" || s == "no") return false;
  throw UsageError(fmt::format("[{}] {}: expected a boolean, got '{}'", section, key, s));
}

void apply_run_key(RunConfig& run, const std::string& section, const std::string& key, const pt::ptree& node) {
  const std::string& text = node.data();
  if (key == "mode") {
    if (text == "local") run.mode = RunMode::local;
    else if (text == "federated") run.mode = RunMode::federated;
    else throw UsageError(fmt::format("[{}] mode: expected local or federated, got '{}'", section, text));
  } else if (key == "client") {
    run.local_client = value_of<std::uint32_t>(section, key, node);
  } else if (key == "client_mode") {
    run.client_mode = parse_client_mode(text);
  } else if (key == "mu") {
    run.mu = value_of<double>(section, key, node);
  } else if (key == "gamma") {
    run.gamma = value_of<double>(section, key, node);
  } else if (key == "alpha") {
    run.alpha = value_of<double>(section, key, node);
  } else if (key == "kpi_exponent" || key == "r") {
    run.kpi_exponent = value_of<double>(section, key, node);
  } else if (key == "strategy") {
    run.strategy = parse_strategy(text);
  } else if (key == "T" || key == "temperature") {
    run.temperature = value_of<double>(section, key, node);
  } else if (key == "xi") {
    run.xi = value_of<int>(section, key, node);
  } else if (key == "normalize_xi") {
    run.normalize_xi = bool_of(section, key, node);
  } else if (key == "min_clients") {
    run.min_clients = value_of<std::uint32_t>(section, key, node);
  } else if (key == "rounds") {
    run.rounds = value_of<std::uint32_t>(section, key, node);
  } else if (key == "local_epochs") {
    run.local_epochs = value_of<int>(section, key, node);
  } else if (key == "batch_size") {
    run.batch_size = value_of<int>(section, key, node);
  } else if (key == "lr") {
    run.lr = value_of<double>(section, key, node);
  } else if (key == "share_fraction") {
    run.share_fraction = value_of<double>(section, key, node);
  } else if (key == "carrier") {
    run.carrier = parse_carrier(text);
  } else {
    throw UsageError(fmt::format("[{}] unknown key '{}'", section, key));
  }
}

}  // namespace

void ExperimentConfig::validate() const {
  benchmark.model.validate();
  std::set<std::string> names;
  for (const auto& run : runs) {
    if (!names.insert(run.name).second) throw UsageError(fmt::format("duplicate run name '{}'", run.name));
    client_config_for(run, 0, 0).validate();
    if (run.mode == RunMode::local && run.local_client > 2) {
      throw UsageError(fmt::format("run '{}': client index {} out of range", run.name, run.local_client));
    }
    if (run.mode == RunMode::federated) {
      aggregation_config_for(run).validate();
      if (run.min_clients > 3) {
        throw UsageError(fmt::format("run '{}': min_clients {} exceeds the three benchmark clients", run.name,
                                     run.min_clients));
      }
    }
  }
}

ExperimentConfig parse_config(std::istream& in) {
  // The ini parser only knows ';' comments; accept '#' as well. It also drops
  // sections without keys, so section order is taken from the headers here.
  std::ostringstream filtered;
  std::vector<std::string> sections;
  for (std::string line; std::getline(in, line);) {
    const auto first = line.find_first_not_of(" \t");
    if (first != std::string::npos && line[first] == '#') continue;
    const auto last = line.find_last_not_of(" \t\r");
    if (first != std::string::npos && line[first] == '[' && line[last] == ']') {
      std::string name = line.substr(first + 1, last - first - 1);
      const auto a = name.find_first_not_of(" \t"), b = name.find_last_not_of(" \t");
      sections.push_back(a == std::string::npos ? std::string{} : name.substr(a, b - a + 1));
    }
    filtered << line << '\n';
  }
  std::istringstream src(filtered.str());
  pt::ptree tree;
  try {
    pt::read_ini(src, tree);
  } catch (const pt::ini_parser_error& e) {
    throw UsageError(fmt::format("config line {}: {}", e.line(), e.message()));
  }

  ExperimentConfig cfg;
  RunConfig defaults;
  if (auto d = tree.get_child_optional(pt::ptree::path_type("defaults", '\0'))) {
    for (const auto& [key, node] : *d) apply_run_key(defaults, "defaults", key, node);
  }

  for (const auto& [name, body] : tree) {
    if (std::find(sections.begin(), sections.end(), name) == sections.end()) {
      throw UsageError(fmt::format("key '{}' outside any section", name));
    }
  }

  const pt::ptree empty;
  for (const auto& section : sections) {
    if (section == "defaults") continue;
    auto child = tree.get_child_optional(pt::ptree::path_type(section, '\0'));
    const pt::ptree& body = child ? *child : empty;
    if (section == "benchmark") {
      for (const auto& [key, node] : body) {
        if (key == "seed") cfg.benchmark.seed = value_of<std::uint64_t>(section, key, node);
        else if (key == "image_size") cfg.benchmark.image_size = value_of<int>(section, key, node);
        else if (key == "noise_sigma") cfg.benchmark.noise_sigma = value_of<double>(section, key, node);
        else if (key == "dataset_file") cfg.benchmark.dataset_file = node.data();
        else if (key == "patch_radius") cfg.benchmark.model.patch_radius = value_of<int>(section, key, node);
        else if (key == "hidden_units") cfg.benchmark.model.hidden_units = value_of<int>(section, key, node);
        else throw UsageError(fmt::format("[benchmark] unknown key '{}'", key));
      }
    } else if (section.rfind("run:", 0) == 0) {
      RunConfig run = defaults;
      run.name = section.substr(4);
      if (run.name.empty()) throw UsageError("run section needs a name: [run:<name>]");
      for (const auto& [key, node] : body) apply_run_key(run, section, key, node);
      cfg.runs.push_back(std::move(run));
    } else {
      throw UsageError(fmt::format("unknown section [{}]", section));
    }
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError(fmt::format("cannot open config {}", path.string()));
  return parse_config(in);
}

}  // namespace fedsim
