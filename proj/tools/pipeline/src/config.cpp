#include "opfcert/pipeline/config.hpp"

#include <algorithm>
#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <openssl/evp.h>

#include "opfcert/common/errors.hpp"

namespace opfcert::pipeline {

namespace fs = std::filesystem;

const char* variant_name(Variant v) { return v == Variant::Base ? "base" : "crown"; }

Variant parse_variant(const std::string& name) {
    if (name == "base") return Variant::Base;
    if (name == "crown") return Variant::Crown;
    throw ValidationError("unknown variant '" + name + "' (expected base or crown)");
}

nn::LossWeights RunConfig::default_weights() {
    nn::LossWeights w;
    w.wc = 1e-3;
    return w;
}

void RunConfig::validate() const {
    if (case_path.empty()) throw ValidationError("case.path is required");
    if (sampling.n_samples < 11) throw ValidationError("data.samples must be at least 11 (8:2:1 split)");
    if (!(sampling.load_low >= 0.0 && sampling.load_low < sampling.load_high))
        throw ValidationError("data.load_high must exceed data.load_low");
    if (epochs == 0) throw ValidationError("train.epochs must be positive");
    if (!(prune_fraction >= 0.0 && prune_fraction < 1.0)) throw ValidationError("train.prune_fraction must lie in [0, 1)");
    if (!(wc_delta >= 0.0 && wc_delta <= 0.2)) throw ValidationError("train.wc_delta must lie in [0, 0.2]");
    weights.validate();
    if (max_subdomains == 0) throw ValidationError("verify.max_subdomains must be positive");
    if (!(gap_tolerance >= 0.0)) throw ValidationError("verify.gap must be non-negative");
    if (attack_restarts < 0 || attack_steps < 1) throw ValidationError("verify attack settings must be positive");
    if (deltas.empty() || !std::is_sorted(deltas.begin(), deltas.end()) || deltas.front() < 0.0 || deltas.back() > 0.2)
        throw ValidationError("verify.deltas must be increasing values in [0, 0.2]");
    if (restore_scenarios == 0) throw ValidationError("restore.scenarios must be positive");
}

namespace {

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double to_double(const std::string& key, const std::string& s) {
    errno = 0;
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE)
        throw ValidationError(key + ": '" + s + "' is not a number");
    return v;
}

std::uint64_t to_unsigned(const std::string& key, const std::string& s) {
    errno = 0;
    char* end = nullptr;
    const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
    if (s.empty() || s.front() == '-' || end != s.c_str() + s.size() || errno == ERANGE)
        throw ValidationError(key + ": '" + s + "' is not a non-negative integer");
    return v;
}

struct Field {
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
    bool hashed = true;
};

Field real(double RunConfig::*m) {
    return {[m](const RunConfig& c) { return format_double(c.*m); },
            [m](RunConfig& c, const std::string& s) { c.*m = to_double("", s); }};
}

template <class T>
Field count(T RunConfig::*m) {
    return {[m](const RunConfig& c) { return std::to_string(c.*m); },
            [m](RunConfig& c, const std::string& s) { c.*m = static_cast<T>(to_unsigned("", s)); }};
}

Field weight(double nn::LossWeights::*m) {
    return {[m](const RunConfig& c) { return format_double(c.weights.*m); },
            [m](RunConfig& c, const std::string& s) { c.weights.*m = to_double("", s); }};
}

Field sampling_real(double data::SamplingConfig::*m) {
    return {[m](const RunConfig& c) { return format_double(c.sampling.*m); },
            [m](RunConfig& c, const std::string& s) { c.sampling.*m = to_double("", s); }};
}

const std::map<std::string, Field>& fields() {
    static const std::map<std::string, Field> f = [] {
        std::map<std::string, Field> m;
        m["run.seed"] = count(&RunConfig::seed);
        m["run.out"] = {[](const RunConfig& c) { return c.out_dir; },
                        [](RunConfig& c, const std::string& s) { c.out_dir = s; }, false};
        m["run.workers"] = count(&RunConfig::workers);
        m["run.workers"].hashed = false;
        // Hashed by file name and content so the hash does not depend on where the run lives.
        m["case.path"] = {[](const RunConfig& c) {
                              std::ifstream in(c.case_path, std::ios::binary);
                              std::ostringstream body;
                              body << in.rdbuf();
                              return fs::path(c.case_path).filename().string() + ":" +
                                     sha256_hex(body.str()).substr(0, 16);
                          },
                          [](RunConfig& c, const std::string& s) { c.case_path = s; }};
        m["data.samples"] = {[](const RunConfig& c) { return std::to_string(c.sampling.n_samples); },
                             [](RunConfig& c, const std::string& s) { c.sampling.n_samples = to_unsigned("", s); }};
        m["data.correlation"] = sampling_real(&data::SamplingConfig::correlation_target);
        m["data.load_low"] = sampling_real(&data::SamplingConfig::load_low);
        m["data.load_high"] = sampling_real(&data::SamplingConfig::load_high);
        m["data.kumaraswamy_a"] = sampling_real(&data::SamplingConfig::kumaraswamy_a);
        m["data.kumaraswamy_b"] = sampling_real(&data::SamplingConfig::kumaraswamy_b);
        m["train.head"] = {[](const RunConfig& c) { return std::string(nn::head_name(c.head)); },
                           [](RunConfig& c, const std::string& s) { c.head = nn::parse_head(s); }};
        m["train.variant"] = {[](const RunConfig& c) { return std::string(variant_name(c.variant)); },
                              [](RunConfig& c, const std::string& s) { c.variant = parse_variant(s); }};
        m["train.hidden"] = count(&RunConfig::hidden);
        m["train.epochs"] = count(&RunConfig::epochs);
        m["train.batch"] = count(&RunConfig::batch);
        m["train.learning_rate"] = real(&RunConfig::learning_rate);
        m["train.prune_epoch"] = count(&RunConfig::prune_epoch);
        m["train.prune_fraction"] = real(&RunConfig::prune_fraction);
        m["train.wc_delta"] = real(&RunConfig::wc_delta);
        m["weights.mse"] = weight(&nn::LossWeights::mse);
        m["weights.pg"] = weight(&nn::LossWeights::pg);
        m["weights.qg"] = weight(&nn::LossWeights::qg);
        m["weights.vm"] = weight(&nn::LossWeights::vm);
        m["weights.flow"] = weight(&nn::LossWeights::flow);
        m["weights.bal"] = weight(&nn::LossWeights::bal);
        m["weights.wc"] = weight(&nn::LossWeights::wc);
        m["verify.max_subdomains"] = count(&RunConfig::max_subdomains);
        m["verify.timeout"] = real(&RunConfig::timeout_seconds);
        m["verify.gap"] = real(&RunConfig::gap_tolerance);
        m["verify.norm"] = {
            [](const RunConfig& c) {
                return std::string(c.certify_bounds.norm == bounds::NormMode::Exact ? "exact" : "enclosure");
            },
            [](RunConfig& c, const std::string& s) {
                if (s != "exact" && s != "enclosure") throw ValidationError("'" + s + "' is not exact or enclosure");
                c.certify_bounds.norm = s == "exact" ? bounds::NormMode::Exact : bounds::NormMode::Enclosure;
            }};
        m["verify.intermediate"] = {
            [](const RunConfig& c) {
                return std::string(c.certify_bounds.intermediate == bounds::IntermediateMode::Crown ? "crown"
                                                                                                   : "interval");
            },
            [](RunConfig& c, const std::string& s) {
                if (s != "crown" && s != "interval") throw ValidationError("'" + s + "' is not crown or interval");
                c.certify_bounds.intermediate =
                    s == "crown" ? bounds::IntermediateMode::Crown : bounds::IntermediateMode::Interval;
            }};
        m["verify.attack_restarts"] = count(&RunConfig::attack_restarts);
        m["verify.attack_steps"] = count(&RunConfig::attack_steps);
        m["verify.deltas"] = {[](const RunConfig& c) {
                                  std::string out;
                                  for (double d : c.deltas) out += (out.empty() ? "" : ",") + format_double(d);
                                  return out;
                              },
                              [](RunConfig& c, const std::string& s) {
                                  c.deltas.clear();
                                  std::stringstream ss(s);
                                  std::string item;
                                  while (std::getline(ss, item, ',')) {
                                      item.erase(0, item.find_first_not_of(' '));
                                      item.erase(item.find_last_not_of(' ') + 1);
                                      c.deltas.push_back(to_double("", item));
                                  }
                              }};
        m["restore.scenarios"] = count(&RunConfig::restore_scenarios);
        return m;
    }();
    return f;
}

}  // namespace

void set_value(RunConfig& config, const std::string& name, const std::string& value) {
    auto it = fields().find(name);
    if (it == fields().end()) throw ValidationError("unknown config key '" + name + "'");
    try {
        it->second.set(config, value);
    } catch (const InputError& e) {
        throw ValidationError(name + ": " + e.what());
    }
}

RunConfig parse_config(std::istream& in, const std::string& base_dir) {
    boost::property_tree::ptree tree;
    try {
        boost::property_tree::ini_parser::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ParseError(e.line(), e.message());
    }
    RunConfig c;
    for (const auto& [section, body] : tree) {
        if (body.empty()) throw ValidationError("key '" + section + "' must be inside a section");
        for (const auto& [key, value] : body) set_value(c, section + "." + key, value.get_value<std::string>());
    }
    if (!c.case_path.empty() && fs::path(c.case_path).is_relative())
        c.case_path = (fs::path(base_dir) / c.case_path).lexically_normal().string();
    return c;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot read config " + path);
    const std::string dir = fs::path(path).parent_path().string();
    return parse_config(in, dir.empty() ? "." : dir);
}

std::string canonical_text(const RunConfig& config) {
    std::string out;
    for (const auto& [name, field] : fields())
        if (field.hashed) out += name + "=" + field.get(config) + "\n";
    return out;
}

std::string sha256_hex(const std::string& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw NumericalError("SHA-256 failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 15];
    }
    return out;
}

std::string config_hash(const RunConfig& config) { return sha256_hex(canonical_text(config)).substr(0, 16); }

}  // namespace opfcert::pipeline
