#include "cli_support.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "skipseg/common.hpp"

namespace skipseg::cli {

using nlohmann::json;

namespace {

std::string option_key(const std::string& arg) {
  if (arg.rfind("--", 0) != 0) return {};
  const auto eq = arg.find('=');
  return arg.substr(2, eq == std::string::npos ? std::string::npos : eq - 2);
}

std::string scalar_text(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  return v.dump();
}

json typed_value(const std::string& text) {
  if (text == "true" || text == "false") return text == "true";
  try {
    auto v = json::parse(text);
    if (v.is_number()) return v;
  } catch (const json::exception&) {
  }
  return text;
}

}  // namespace

std::vector<std::string> expand_config(const std::vector<std::string>& args,
                                       const std::vector<std::string>& subcommands) {
  std::vector<std::string> rest;
  std::string config_path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      config_path = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      config_path = args[i].substr(9);
    } else {
      rest.push_back(args[i]);
    }
  }
  if (config_path.empty()) return rest;
  require_inputs({config_path});
  std::ifstream in(config_path);
  json cfg;
  try {
    cfg = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError("config " + config_path + ": " + e.what());
  }
  if (!cfg.is_object()) throw ParseError("config " + config_path + ": expected a JSON object");

  std::set<std::string> given;
  std::string sub;
  for (const auto& a : rest) {
    if (auto k = option_key(a); !k.empty()) given.insert(k);
    if (sub.empty() && std::find(subcommands.begin(), subcommands.end(), a) != subcommands.end()) sub = a;
  }
  std::vector<std::string> injected;
  for (const auto& [key, value] : cfg.items()) {
    if (key == "subcommand" || key == "config" || given.count(key)) continue;
    if (value.is_null()) continue;
    if (value.is_array()) {
      if (value.empty()) continue;
      injected.push_back("--" + key);
      for (const auto& v : value) injected.push_back(scalar_text(v));
    } else if (value.is_boolean()) {
      injected.push_back("--" + key + "=" + scalar_text(value));
    } else {
      injected.push_back("--" + key);
      injected.push_back(scalar_text(value));
    }
  }

  std::vector<std::string> out;
  if (sub.empty()) {
    if (!cfg.contains("subcommand")) throw ParseError("config " + config_path + ": no subcommand given");
    out.push_back(cfg["subcommand"].get<std::string>());
    out.insert(out.end(), injected.begin(), injected.end());
    out.insert(out.end(), rest.begin(), rest.end());
  } else {
    for (const auto& a : rest) {
      out.push_back(a);
      if (a == sub) out.insert(out.end(), injected.begin(), injected.end());
    }
  }
  return out;
}

std::string manifest_json(const CLI::App& app, const CLI::App& sub) {
  json m;
  m["subcommand"] = sub.get_name();
  auto collect = [&](const CLI::App& a) {
    for (const CLI::Option* opt : a.get_options()) {
      const std::string key = opt->get_lnames().empty() ? std::string{} : opt->get_lnames().front();
      if (key.empty() || key == "help" || key == "config") continue;
      std::vector<std::string> values = opt->count() ? opt->results() : std::vector<std::string>{};
      if (values.empty() && !opt->get_default_str().empty()) values = {opt->get_default_str()};
      const bool is_flag = opt->get_type_size() == 0;
      if (is_flag) {
        m[key] = opt->count() > 0 && (values.empty() || values.back() != "false");
      } else if (opt->get_items_expected_max() > 1) {
        json arr = json::array();
        if (values.size() == 1 && values[0].size() > 1 && values[0].front() == '[') {
          // CLI11 renders vector defaults as "[a,b]"
          std::string body = values[0].substr(1, values[0].size() - 2);
          std::size_t pos = 0;
          while (!body.empty() && pos <= body.size()) {
            const auto comma = body.find(',', pos);
            arr.push_back(typed_value(body.substr(pos, comma - pos)));
            if (comma == std::string::npos) break;
            pos = comma + 1;
          }
        } else {
          for (const auto& v : values) arr.push_back(typed_value(v));
        }
        m[key] = arr;
      } else if (!values.empty()) {
        m[key] = typed_value(values.back());
      }
    }
  };
  collect(app);
  collect(sub);
  return m.dump(2) + "\n";
}

void write_manifest(const CLI::App& app, const CLI::App& sub, const std::filesystem::path& output) {
  const auto path = std::filesystem::is_directory(output) ? output / "run_config.json"
                                                          : std::filesystem::path(output.string() + ".run_config.json");
  std::ofstream out(path);
  if (!out) throw Error("cannot write manifest " + path.string());
  out << manifest_json(app, sub);
}

void require_inputs(const std::vector<std::string>& paths) {
  for (const auto& p : paths)
    if (!p.empty() && !std::filesystem::exists(p)) throw MissingInput{p};
}

std::vector<std::string> expand_inputs(const std::vector<std::string>& paths, const std::string& extension) {
  std::vector<std::string> out;
  for (const auto& p : paths) {
    if (std::filesystem::is_directory(p)) {
      std::vector<std::string> found;
      for (const auto& e : std::filesystem::directory_iterator(p))
        if (e.is_regular_file() && e.path().extension() == extension) found.push_back(e.path().string());
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else {
      out.push_back(p);
    }
  }
  return out;
}

}  // namespace skipseg::cli
