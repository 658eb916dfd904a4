#include "flame/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "flame/error.hpp"

namespace flame {

std::string attack_name(AttackKind k) {
  switch (k) {
    case AttackKind::none: return "none";
    case AttackKind::same_value: return "same_value";
    case AttackKind::sign_flip: return "sign_flip";
    case AttackKind::gaussian: return "gaussian";
    case AttackKind::label_poison: return "label_poison";
  }
  return "unknown";
}

AttackKind parse_attack(const std::string& name) {
  for (auto k : {AttackKind::none, AttackKind::same_value, AttackKind::sign_flip, AttackKind::gaussian,
                 AttackKind::label_poison})
    if (attack_name(k) == name) return k;
  throw Error(Errc::config_invalid, "unknown attack kind '" + name + "'");
}

IndexList malicious_set(std::size_t m, double fraction, std::uint64_t seed) {
  require(fraction >= 0 && fraction <= 1, Errc::invalid_argument, "malicious fraction must be in [0, 1]");
  const auto count = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(m)));
  IndexList ids = all_positions(m);
  Rng rng = make_rng(seed, Stream::attack, {0});
  std::shuffle(ids.begin(), ids.end(), rng);
  ids.resize(count);
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<bool> benign_mask(std::size_t m, const IndexList& malicious) {
  std::vector<bool> mask(m, true);
  for (auto i : malicious) mask.at(i) = false;
  return mask;
}

ParamVector corrupt_message(AttackKind kind, const ParamVector& honest, double gamma, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  switch (kind) {
    case AttackKind::same_value:
      return ParamVector::Constant(honest.size(), gamma * normal(rng));
    case AttackKind::sign_flip:
      return -std::abs(gamma * normal(rng)) * honest;
    case AttackKind::gaussian: {
      ParamVector out(honest.size());
      for (Eigen::Index k = 0; k < out.size(); ++k) out[k] = gamma * normal(rng);
      return out;
    }
    default:
      throw Error(Errc::invalid_argument, "corrupt_message: " + attack_name(kind) + " is not a message attack");
  }
}

std::vector<int> poison_labels(const std::vector<int>& labels, const IndexList& rows, int num_classes,
                               PoisonMode mode, std::uint64_t seed) {
  if (mode == PoisonMode::flip)
    require(num_classes == 2, Errc::invalid_argument, "label flipping needs exactly two classes");
  require(num_classes >= 1, Errc::invalid_argument, "poison_labels: need classes");
  std::vector<int> out = labels;
  Rng rng = make_rng(seed, Stream::poison);
  std::uniform_int_distribution<int> pick(0, num_classes - 1);
  for (auto r : rows) {
    require(r < out.size(), Errc::invalid_argument, "poison_labels: row out of range");
    out[r] = mode == PoisonMode::flip ? 1 - out[r] : pick(rng);
  }
  return out;
}

std::shared_ptr<SampleStore> poison_store(const SampleStore& store,
                                          const std::vector<IndexList>& client_rows,
                                          const IndexList& malicious, PoisonMode mode,
                                          std::uint64_t seed) {
  IndexList rows;
  for (auto i : malicious) rows.insert(rows.end(), client_rows.at(i).begin(), client_rows.at(i).end());
  auto out = std::make_shared<SampleStore>(store);
  out->labels = poison_labels(store.labels, rows, store.num_classes, mode, seed);
  return out;
}

RunHooks apply_attack(RunHooks hooks, const AttackConfig& cfg, const IndexList& malicious,
                      std::uint64_t seed) {
  if (!cfg.byzantine() || malicious.empty()) return hooks;
  auto inner = hooks.upload;
  auto bad = std::make_shared<std::vector<bool>>();
  for (auto i : malicious) {
    if (bad->size() <= i) bad->resize(i + 1, false);
    (*bad)[i] = true;
  }
  hooks.upload = [inner, bad, cfg, seed](std::size_t client, int round, const ParamVector& honest) {
    const ParamVector msg = inner ? inner(client, round, honest) : honest;
    if (client >= bad->size() || !(*bad)[client]) return msg;
    Rng rng = make_rng(seed, Stream::attack, {1, client, static_cast<std::uint64_t>(round)});
    return corrupt_message(cfg.kind, msg, cfg.gamma, rng);
  };
  return hooks;
}

}  // namespace flame
