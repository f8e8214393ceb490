// SPDX-License-Identifier: Apache-2.0
#include "defas/config.hpp"

#include <algorithm>
#include <cstdio>
#include <map>

#include "defas/check.hpp"

namespace defas {

namespace {

// One schema walk shared by serialization, overrides, and hashing.
template <typename F>
void visit_fields(RunConfig& c, F&& f) {
  f("data.seed", c.data.seed);
  f("data.image_size", c.data.image_size);
  f("data.channels", c.data.channels);
  f("data.n_domains", c.data.n_domains);
  f("data.subjects_per_domain", c.data.subjects_per_domain);
  f("data.frames_per_video", c.data.frames_per_video);
  f("data.attacks", c.data.attacks);
  f("data.artifact_min", c.data.artifact_min);
  f("data.artifact_max", c.data.artifact_max);
  f("data.extra_real_domains", c.data.extra_real_domains);
  f("data.extra_real_subjects", c.data.extra_real_subjects);

  f("dfg.seed", c.dfg.seed);
  f("dfg.T", c.dfg.T);
  f("dfg.beta_min", c.dfg.beta_min);
  f("dfg.beta_max", c.dfg.beta_max);
  f("dfg.channels", c.dfg.channels);
  f("dfg.time_dim", c.dfg.time_dim);
  f("dfg.id_tokens", c.dfg.id_tokens);
  f("dfg.id_dim", c.dfg.id_dim);
  f("dfg.steps", c.dfg.steps);
  f("dfg.batch", c.dfg.batch);
  f("dfg.lr", c.dfg.lr);
  f("dfg.extra_frac", c.dfg.extra_frac);

  f("cue.seed", c.cue.seed);
  f("cue.t_hat", c.cue.t_hat);
  f("cue.n_steps", c.cue.n_steps);
  f("cue.mask_background", c.cue.mask_background);
  f("cue.dump_png", c.cue.dump_png);

  f("fas.seed", c.fas.seed);
  f("fas.mode", c.fas.mode);
  f("fas.patch", c.fas.patch);
  f("fas.d_model", c.fas.d_model);
  f("fas.blocks", c.fas.blocks);
  f("fas.heads", c.fas.heads);
  f("fas.cue_tokens", c.fas.cue_tokens);
  f("fas.cue_dim", c.fas.cue_dim);
  f("fas.ffn_hidden", c.fas.ffn_hidden);
  f("fas.steps", c.fas.steps);
  f("fas.batch", c.fas.batch);
  f("fas.lr", c.fas.lr);
  f("fas.momentum", c.fas.momentum);
  f("fas.lr_decay_every", c.fas.lr_decay_every);
  f("fas.lr_decay", c.fas.lr_decay);
  f("fas.w_adv", c.fas.w_adv);
  f("fas.w_trip", c.fas.w_trip);
  f("fas.margin", c.fas.margin);
  f("fas.grl_lambda", c.fas.grl_lambda);
  f("fas.val_frac", c.fas.val_frac);
  f("fas.embed_norm", c.fas.embed_norm);
  f("fas.use_extra_real", c.fas.use_extra_real);

  f("eval.frames", c.eval.frames);
  f("eval.hter_policy", c.eval.hter_policy);

  f("theory.seed", c.theory.seed);
  f("theory.kl_grid", c.theory.kl_grid);
  f("theory.kl_mc_samples", c.theory.kl_mc_samples);
  f("theory.kl_dim", c.theory.kl_dim);
  f("theory.pairs", c.theory.pairs);
  f("theory.slack", c.theory.slack);
  f("theory.t_min", c.theory.t_min);
  f("theory.t_max", c.theory.t_max);
}

std::string canon(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}
std::string canon(int v) { return std::to_string(v); }
std::string canon(int64_t v) { return std::to_string(v); }
std::string canon(bool v) { return v ? "true" : "false"; }
std::string canon(const std::string& v) { return v; }

struct Hasher {
  std::map<std::string, std::string> lines;  // sorted by key
  template <typename T>
  void operator()(const char* key, T& value) {
    lines.emplace(key, canon(value));
  }
  uint64_t digest(const std::vector<std::string>& prefixes) const {
    std::string all;
    for (const auto& [k, v] : lines) {
      bool keep = prefixes.empty();
      for (const std::string& p : prefixes) {
        if (k.rfind(p, 0) == 0) {
          keep = true;
          break;
        }
      }
      if (keep) {
        all += k;
        all += '=';
        all += v;
        all += '\n';
      }
    }
    return fnv1a64(all);
  }
};

std::string scoped_key(const RunConfig& c, const std::vector<std::string>& prefixes) {
  Hasher h;
  visit_fields(const_cast<RunConfig&>(c), h);
  return hex64(h.digest(prefixes));
}

}  // namespace

uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 14695981039346656037ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  visit_fields(const_cast<RunConfig&>(*this),
               [&j](const char* key, auto& value) { j[key] = value; });
  return j;
}

void RunConfig::apply(const nlohmann::json& flat) {
  DEFAS_CHECK(flat.is_object(), "config must be a flat JSON object");
  std::vector<std::string> unknown;
  for (auto it = flat.begin(); it != flat.end(); ++it) unknown.push_back(it.key());
  visit_fields(*this, [&flat, &unknown](const char* key, auto& value) {
    auto it = flat.find(key);
    if (it == flat.end()) return;
    using T = std::decay_t<decltype(value)>;
    value = it->get<T>();
    unknown.erase(std::remove(unknown.begin(), unknown.end(), key), unknown.end());
  });
  DEFAS_CHECK(unknown.empty(), "unknown config key ", unknown.empty() ? "" : unknown.front());
}

RunConfig RunConfig::from_json(const nlohmann::json& flat) {
  RunConfig c;
  c.apply(flat);
  return c;
}

std::string RunConfig::corpus_key() const { return scoped_key(*this, {"data."}); }
std::string RunConfig::dfg_key() const { return scoped_key(*this, {"data.", "dfg."}); }
std::string RunConfig::cue_key() const { return scoped_key(*this, {"data.", "dfg.", "cue."}); }
std::string RunConfig::fas_key() const {
  return scoped_key(*this, {"data.", "dfg.", "cue.", "fas.", "eval."});
}
std::string RunConfig::full_key() const { return scoped_key(*this, {}); }

}  // namespace defas
