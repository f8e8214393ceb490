// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "defas/config.hpp"
#include "defas/cue.hpp"
#include "defas/oanet.hpp"
#include "defas/synth.hpp"

namespace defas {

/// One minibatch resolved to borrowed tensors. Composition invariants:
/// real:fake = 1:1, and among reals corpus:extra = 1:1 when an extra pool
/// is in use.
struct TrainBatch {
  std::vector<const Image*> images;
  std::vector<const Image*> cues;
  std::vector<int> labels;
  std::vector<int> domain_ids;  // extra reals carry the pseudo-domain id
  std::vector<uint8_t> from_extra;

  size_t size() const { return images.size(); }
};

/// Domain id given to extra-pool reals for the adversarial loss; one past
/// the largest id present in the training set.
int pseudo_domain_id(const std::vector<SyntheticSample>& train_set);

/// Stratified sampler: half fakes, half reals, reals split evenly between
/// the corpus and the extra pool when one is configured. Each stratum is
/// drawn without replacement until exhausted, then reshuffled.
class BatchSampler {
 public:
  /// zero_cue non-null substitutes every cue with that tensor (cue-free
  /// baseline). Throws if a required stratum is empty or the batch size is
  /// not divisible by the stratum count.
  BatchSampler(const std::vector<SyntheticSample>& train_set, const CueStore& train_cues,
               const std::vector<SyntheticSample>& extra_pool, const CueStore& extra_cues,
               int batch, uint64_t seed, const Image* zero_cue = nullptr);

  TrainBatch next();

 private:
  void draw(std::vector<int>& order, size_t& cursor, int n, std::vector<int>& out);

  const std::vector<SyntheticSample>* train_set_;
  const CueStore* train_cues_;
  const std::vector<SyntheticSample>* extra_pool_;
  const CueStore* extra_cues_;
  const Image* zero_cue_;
  int batch_;
  int pseudo_domain_;
  Rng rng_;
  std::vector<int> fakes_, reals_, extras_;
  size_t fake_cur_ = 0, real_cur_ = 0, extra_cur_ = 0;
};

/// Two-class cross-entropy, mean reduction.
double cls_loss(const Mat& logits, const std::vector<int>& labels);
Var cls_loss_on(Bound& bd, Var logits, const std::vector<int>& labels);

/// Domain classifier head applied to real-sample features behind a
/// gradient-reversal layer.
struct DomainDiscriminator {
  Linear fc1, fc2;
  int n_domains = 0;

  DomainDiscriminator() = default;
  DomainDiscriminator(ParamStore& ps, Rng& rng, int d_model, int hidden, int n_domains);

  Var forward(Bound& bd, Var features) const;  // N x n_domains logits
};

/// Cross-entropy of the discriminator on real features only. domain_classes
/// aligns with feature rows; entries < 0 (fakes) are excluded and their
/// gradient is exactly zero. Fewer than two distinct real domains yields a
/// constant zero and sets *warned.
Var adv_loss_on(Bound& bd, const DomainDiscriminator& disc, Var features,
                const std::vector<int>& domain_classes, double lambda, bool* warned);

/// Asymmetric triplet hinge, mean over valid triplets. Real anchors pull
/// toward all reals and push all fakes; fake anchors pull same-domain fakes
/// and push other-domain fakes plus all reals. No valid triplet yields a
/// constant zero and sets *warned.
Var triplet_loss_on(Bound& bd, Var features, const std::vector<int>& labels,
                    const std::vector<int>& domain_ids, double margin, bool* warned);

struct TrainLogRow {
  int step = 0;
  double lr = 0.0;
  double total = 0.0, cls = 0.0, adv = 0.0, trip = 0.0;
  double val_hter = -1.0, val_auc = -1.0;  // -1 when not evaluated this step
};

struct FasTrainResult {
  std::vector<TrainLogRow> log;
  int best_step = -1;
  double best_val_hter = 1.0;
  double best_val_auc = 0.0;
  int val_size = 0;  // 0 means no validation split was possible
};

/// SSDG-style training: classification plus weighted adversarial and triplet
/// terms, SGD with momentum and step decay, seeded and deterministic.
/// Validation holds out a stratified tenth of the training videos; the best
/// validation checkpoint is restored into `net` before returning.
FasTrainResult train_fas(OaNet& net, const std::vector<SyntheticSample>& train_set,
                         const CueStore& train_cues,
                         const std::vector<SyntheticSample>& extra_pool,
                         const CueStore& extra_cues, const RunConfig::Fas& cfg);

void write_training_log(const std::filesystem::path& path, const FasTrainResult& result);

}  // namespace defas
