// SPDX-License-Identifier: Apache-2.0
#include "defas/dgtrain.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "defas/check.hpp"
#include "defas/eval.hpp"
#include "defas/io.hpp"

namespace defas {

int pseudo_domain_id(const std::vector<SyntheticSample>& train_set) {
  int max_id = -1;
  for (const auto& s : train_set) max_id = std::max(max_id, s.domain_id);
  return max_id + 1;
}

BatchSampler::BatchSampler(const std::vector<SyntheticSample>& train_set,
                           const CueStore& train_cues,
                           const std::vector<SyntheticSample>& extra_pool,
                           const CueStore& extra_cues, int batch, uint64_t seed,
                           const Image* zero_cue)
    : train_set_(&train_set),
      train_cues_(&train_cues),
      extra_pool_(&extra_pool),
      extra_cues_(&extra_cues),
      zero_cue_(zero_cue),
      batch_(batch),
      pseudo_domain_(pseudo_domain_id(train_set)),
      rng_(seed) {
  DEFAS_CHECK(train_cues.cues.size() == train_set.size(), "cue cache incomplete for train set");
  const bool with_pool = !extra_pool.empty();
  if (with_pool) {
    DEFAS_CHECK(extra_cues.cues.size() == extra_pool.size(), "cue cache incomplete for extra pool");
    DEFAS_CHECK(batch % 4 == 0, "batch ", batch, " must be divisible by 4 with an extra pool");
  } else {
    DEFAS_CHECK(batch % 2 == 0, "batch ", batch, " must be even");
  }
  for (size_t i = 0; i < train_set.size(); ++i)
    (train_set[i].label ? fakes_ : reals_).push_back(static_cast<int>(i));
  for (size_t i = 0; i < extra_pool.size(); ++i) extras_.push_back(static_cast<int>(i));
  DEFAS_CHECK(!fakes_.empty(), "no fake samples to train on");
  DEFAS_CHECK(!reals_.empty(), "no real samples to train on");
  rng_.shuffle(fakes_);
  rng_.shuffle(reals_);
  rng_.shuffle(extras_);
}

void BatchSampler::draw(std::vector<int>& order, size_t& cursor, int n, std::vector<int>& out) {
  for (int k = 0; k < n; ++k) {
    if (cursor >= order.size()) {
      rng_.shuffle(order);
      cursor = 0;
    }
    out.push_back(order[cursor++]);
  }
}

TrainBatch BatchSampler::next() {
  const bool with_pool = !extras_.empty();
  const int n_fake = batch_ / 2;
  const int n_corpus_real = with_pool ? batch_ / 4 : batch_ / 2;
  const int n_extra = with_pool ? batch_ / 4 : 0;

  std::vector<int> fi, ri, ei;
  draw(fakes_, fake_cur_, n_fake, fi);
  draw(reals_, real_cur_, n_corpus_real, ri);
  if (with_pool) draw(extras_, extra_cur_, n_extra, ei);

  TrainBatch b;
  auto push_corpus = [&](int idx) {
    const auto& s = (*train_set_)[idx];
    b.images.push_back(&s.image);
    b.cues.push_back(zero_cue_ ? zero_cue_ : &(*train_cues_).cues[idx].residual);
    b.labels.push_back(s.label);
    b.domain_ids.push_back(s.domain_id);
    b.from_extra.push_back(0);
  };
  for (int idx : fi) push_corpus(idx);
  for (int idx : ri) push_corpus(idx);
  for (int idx : ei) {
    const auto& s = (*extra_pool_)[idx];
    b.images.push_back(&s.image);
    b.cues.push_back(zero_cue_ ? zero_cue_ : &(*extra_cues_).cues[idx].residual);
    b.labels.push_back(0);
    b.domain_ids.push_back(pseudo_domain_);
    b.from_extra.push_back(1);
  }
  return b;
}

double cls_loss(const Mat& logits, const std::vector<int>& labels) {
  DEFAS_CHECK(logits.cols() == 2 && logits.rows() == static_cast<Eigen::Index>(labels.size()),
              "cls_loss shape mismatch");
  double sum = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const int y = labels[static_cast<size_t>(i)];
    DEFAS_CHECK(y == 0 || y == 1, "label must be 0 or 1, got ", y);
    const double m = logits.row(i).maxCoeff();
    const double lse = m + std::log(std::exp(logits(i, 0) - m) + std::exp(logits(i, 1) - m));
    sum += lse - logits(i, y);
  }
  return sum / static_cast<double>(logits.rows());
}

Var cls_loss_on(Bound& bd, Var logits, const std::vector<int>& labels) {
  for (int y : labels) DEFAS_CHECK(y == 0 || y == 1, "label must be 0 or 1, got ", y);
  return bd.tape().softmax_xent(logits, labels);
}

DomainDiscriminator::DomainDiscriminator(ParamStore& ps, Rng& rng, int d_model, int hidden,
                                         int n_domains_)
    : n_domains(n_domains_) {
  DEFAS_CHECK(n_domains >= 2, "discriminator needs at least two domains");
  fc1 = Linear(ps, rng, "disc.fc1", d_model, hidden);
  fc2 = Linear(ps, rng, "disc.fc2", hidden, n_domains);
}

Var DomainDiscriminator::forward(Bound& bd, Var features) const {
  return fc2.forward(bd, bd.tape().relu(fc1.forward(bd, features)));
}

Var adv_loss_on(Bound& bd, const DomainDiscriminator& disc, Var features,
                const std::vector<int>& domain_classes, double lambda, bool* warned) {
  Tape& t = bd.tape();
  DEFAS_CHECK(static_cast<Eigen::Index>(domain_classes.size()) == t.val(features).rows(),
              "domain class list must align with feature rows");
  std::vector<Var> real_rows;
  std::vector<int> real_classes;
  std::set<int> distinct;
  for (size_t i = 0; i < domain_classes.size(); ++i) {
    if (domain_classes[i] < 0) continue;  // fake rows carry no adversarial term
    DEFAS_CHECK(domain_classes[i] < disc.n_domains, "domain class ", domain_classes[i],
                " outside discriminator range");
    real_rows.push_back(t.rows(features, static_cast<int>(i), 1));
    real_classes.push_back(domain_classes[i]);
    distinct.insert(domain_classes[i]);
  }
  if (distinct.size() < 2) {
    if (warned) *warned = true;
    return t.input(Mat::Zero(1, 1));
  }
  Var gathered = t.gradient_reversal(t.concat_rows(real_rows), lambda);
  return t.softmax_xent(disc.forward(bd, gathered), real_classes);
}

Var triplet_loss_on(Bound& bd, Var features, const std::vector<int>& labels,
                    const std::vector<int>& domain_ids, double margin, bool* warned) {
  Tape& t = bd.tape();
  const int n = static_cast<int>(labels.size());
  DEFAS_CHECK(t.val(features).rows() == n && static_cast<int>(domain_ids.size()) == n,
              "triplet input length mismatch");
  Var dist = t.pairwise_sqdist(features);
  Var margin_c = t.input(Mat::Constant(1, 1, margin));

  std::vector<Var> terms;
  for (int a = 0; a < n; ++a) {
    std::vector<int> pos, neg;
    for (int j = 0; j < n; ++j) {
      if (j == a) continue;
      if (labels[a] == 0) {
        (labels[j] == 0 ? pos : neg).push_back(j);
      } else {
        if (labels[j] == 1 && domain_ids[j] == domain_ids[a]) pos.push_back(j);
        if (labels[j] == 0 || (labels[j] == 1 && domain_ids[j] != domain_ids[a]))
          neg.push_back(j);
      }
    }
    if (pos.empty() || neg.empty()) continue;
    Var row = t.rows(dist, a, 1);
    for (int p : pos) {
      Var d_ap = t.cols(row, p, 1);
      for (int ng : neg) {
        Var d_an = t.cols(row, ng, 1);
        terms.push_back(t.relu(t.add(t.sub(d_ap, d_an), margin_c)));
      }
    }
  }
  if (terms.empty()) {
    if (warned) *warned = true;
    return t.input(Mat::Zero(1, 1));
  }
  return t.add_weighted(terms, std::vector<double>(terms.size(), 1.0 / terms.size()));
}

namespace {

struct ValItem {
  const Image* image;
  const Image* cue;
  int label;
};

double eval_scores(const OaNet& net, const std::vector<ValItem>& items, double* out_auc) {
  ScoredSet set;
  for (const auto& it : items) set.add(classify(net.forward(*it.image, *it.cue).logits), it.label);
  if (!set.both_classes()) {
    if (out_auc) *out_auc = 0.0;
    return 1.0;
  }
  if (out_auc) *out_auc = auc(set);
  return hter(set).hter;
}

std::vector<Mat> snapshot_params(const ParamStore& ps) {
  std::vector<Mat> out;
  for (const auto& name : ps.names()) out.push_back(ps.get(name));
  return out;
}

void restore_params(ParamStore& ps, const std::vector<Mat>& snap) {
  const auto& names = ps.names();
  DEFAS_CHECK(names.size() == snap.size(), "snapshot size mismatch");
  for (size_t i = 0; i < names.size(); ++i) ps.get(names[i]) = snap[i];
}

}  // namespace

FasTrainResult train_fas(OaNet& net, const std::vector<SyntheticSample>& train_set,
                         const CueStore& train_cues,
                         const std::vector<SyntheticSample>& extra_pool,
                         const CueStore& extra_cues, const RunConfig::Fas& cfg) {
  DEFAS_CHECK(cfg.mode == "cue" || cfg.mode == "baseline", "unknown mode '", cfg.mode, "'");
  DEFAS_CHECK(train_cues.cues.size() == train_set.size(), "cue cache incomplete for train set");
  const bool use_extra = cfg.use_extra_real && !extra_pool.empty();
  if (use_extra)
    DEFAS_CHECK(extra_cues.cues.size() == extra_pool.size(), "cue cache incomplete for extra pool");

  const OaSpec& spec = net.spec();
  const Image zero_cue = Image::zeros(spec.image_size, spec.image_size, spec.channels);
  const Image* zero = (cfg.mode == "baseline") ? &zero_cue : nullptr;

  // Validation split at video granularity, stratified by label; a class
  // contributes only when it has at least two videos.
  auto videos = group_videos(train_set);
  std::vector<std::vector<int>> real_videos, fake_videos;
  for (const auto& [key, idx] : videos)
    (train_set[idx[0]].label ? fake_videos : real_videos).push_back(idx);
  Rng split_rng = Rng(static_cast<uint64_t>(cfg.seed)).child(777);
  split_rng.shuffle(real_videos);
  split_rng.shuffle(fake_videos);

  std::vector<int> val_idx;
  std::vector<uint8_t> in_val(train_set.size(), 0);
  auto take_val = [&](std::vector<std::vector<int>>& vids) {
    if (vids.size() < 2 || cfg.val_frac <= 0.0) return;
    const int n_val = std::max(
        1, static_cast<int>(std::floor(cfg.val_frac * static_cast<double>(vids.size()))));
    for (int v = 0; v < n_val && v < static_cast<int>(vids.size()) - 1; ++v)
      for (int idx : vids[static_cast<size_t>(v)]) {
        val_idx.push_back(idx);
        in_val[static_cast<size_t>(idx)] = 1;
      }
  };
  take_val(real_videos);
  take_val(fake_videos);

  std::vector<SyntheticSample> fit_set;
  CueStore fit_cues;
  for (size_t i = 0; i < train_set.size(); ++i) {
    if (in_val[i]) continue;
    fit_set.push_back(train_set[i]);
    fit_cues.cues.push_back(train_cues.cues[i]);
  }
  std::vector<ValItem> val_items;
  bool val_has_real = false, val_has_fake = false;
  for (int idx : val_idx) {
    const auto& s = train_set[static_cast<size_t>(idx)];
    val_items.push_back(
        {&s.image, zero ? zero : &train_cues.cues[static_cast<size_t>(idx)].residual, s.label});
    (s.label ? val_has_fake : val_has_real) = true;
  }
  if (!(val_has_real && val_has_fake)) val_items.clear();

  static const std::vector<SyntheticSample> kNoPool;
  static const CueStore kNoCues;
  BatchSampler sampler(fit_set, fit_cues, use_extra ? extra_pool : kNoPool,
                       use_extra ? extra_cues : kNoCues, cfg.batch,
                       static_cast<uint64_t>(cfg.seed), zero);

  // Discriminator classes: distinct real domains of the training set plus
  // the pseudo-domain of the extra pool.
  std::map<int, int> domain_class;
  for (const auto& s : fit_set)
    if (s.label == 0) domain_class.emplace(s.domain_id, 0);
  if (use_extra) domain_class.emplace(pseudo_domain_id(train_set), 0);
  int next_class = 0;
  for (auto& [id, cls] : domain_class) cls = next_class++;

  Rng disc_rng = Rng(static_cast<uint64_t>(cfg.seed)).child(991);
  DomainDiscriminator disc;
  const bool with_adv = cfg.w_adv > 0.0 && domain_class.size() >= 2;
  if (with_adv)
    disc = DomainDiscriminator(net.params(), disc_rng, spec.d_model,
                               std::max(16, spec.d_model / 2),
                               static_cast<int>(domain_class.size()));

  SgdMomentum opt(cfg.lr, cfg.momentum);
  FasTrainResult result;
  result.val_size = static_cast<int>(val_items.size());
  std::vector<Mat> best_snap;
  const int eval_every = std::max(10, cfg.steps / 10);

  for (int step = 0; step < cfg.steps; ++step) {
    opt.set_lr(cfg.lr * std::pow(cfg.lr_decay, step / std::max(1, cfg.lr_decay_every)));
    TrainBatch batch = sampler.next();

    // composition invariants, checked on every batch
    int n_fake = 0, n_extra = 0, n_creal = 0;
    for (size_t i = 0; i < batch.size(); ++i) {
      if (batch.labels[i] == 1) {
        ++n_fake;
      } else {
        (batch.from_extra[i] ? n_extra : n_creal)++;
      }
    }
    DEFAS_CHECK(n_fake * 2 == static_cast<int>(batch.size()), "batch not half fake");
    if (use_extra) DEFAS_CHECK(n_extra == n_creal, "corpus/extra reals unbalanced");

    Tape t;
    Bound bd(t, net.params());
    std::vector<Var> feats;
    for (size_t i = 0; i < batch.size(); ++i)
      feats.push_back(net.feature_on(bd, *batch.images[i], *batch.cues[i]));
    Var F = t.concat_rows(feats);
    Var logits = net.logits_on(bd, F);
    Var cls = cls_loss_on(bd, logits, batch.labels);

    std::vector<Var> terms{cls};
    std::vector<double> weights{1.0};
    TrainLogRow row;
    row.step = step;
    row.lr = opt.lr();
    row.cls = t.val(cls)(0, 0);

    Var E = cfg.embed_norm ? t.l2_normalize_rows(F) : F;
    if (with_adv) {
      std::vector<int> classes(batch.size(), -1);
      for (size_t i = 0; i < batch.size(); ++i)
        if (batch.labels[i] == 0) classes[i] = domain_class.at(batch.domain_ids[i]);
      bool warn = false;
      Var adv = adv_loss_on(bd, disc, E, classes, cfg.grl_lambda, &warn);
      terms.push_back(adv);
      weights.push_back(cfg.w_adv);
      row.adv = t.val(adv)(0, 0);
    }
    if (cfg.w_trip > 0.0) {
      bool warn = false;
      Var trip = triplet_loss_on(bd, E, batch.labels, batch.domain_ids, cfg.margin, &warn);
      terms.push_back(trip);
      weights.push_back(cfg.w_trip);
      row.trip = t.val(trip)(0, 0);
    }
    Var total = t.add_weighted(terms, weights);
    row.total = t.val(total)(0, 0);
    t.backward(total);
    opt.step(bd);

    if (!val_items.empty() && ((step + 1) % eval_every == 0 || step + 1 == cfg.steps)) {
      double va = 0.0;
      const double vh = eval_scores(net, val_items, &va);
      row.val_hter = vh;
      row.val_auc = va;
      if (result.best_step < 0 || vh < result.best_val_hter - 1e-12 ||
          (std::abs(vh - result.best_val_hter) <= 1e-12 && va > result.best_val_auc)) {
        result.best_step = step;
        result.best_val_hter = vh;
        result.best_val_auc = va;
        best_snap = snapshot_params(net.params());
      }
    }
    result.log.push_back(row);
  }

  if (!best_snap.empty()) restore_params(net.params(), best_snap);
  return result;
}

void write_training_log(const std::filesystem::path& path, const FasTrainResult& result) {
  CsvWriter csv(path, {"step", "lr", "total", "cls", "adv", "trip", "val_hter", "val_auc"});
  for (const auto& r : result.log)
    csv.row_values({static_cast<double>(r.step), r.lr, r.total, r.cls, r.adv, r.trip, r.val_hter,
                    r.val_auc});
}

}  // namespace defas
