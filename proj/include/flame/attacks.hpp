#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "flame/engine.hpp"
#include "flame/models.hpp"
#include "flame/rng.hpp"

namespace flame {

enum class AttackKind { none, same_value, sign_flip, gaussian, label_poison };
enum class PoisonMode { flip, uniform };

std::string attack_name(AttackKind k);
AttackKind parse_attack(const std::string& name);

struct AttackConfig {
  AttackKind kind = AttackKind::none;
  double gamma = 0.1;
  double fraction = 0.0;
  PoisonMode poison = PoisonMode::uniform;

  bool byzantine() const {
    return kind == AttackKind::same_value || kind == AttackKind::sign_flip || kind == AttackKind::gaussian;
  }
};

/// round(fraction * m) client ids chosen by a seeded shuffle, returned ascending.
IndexList malicious_set(std::size_t m, double fraction, std::uint64_t seed);

/// true for benign clients.
std::vector<bool> benign_mask(std::size_t m, const IndexList& malicious);

/// The message a Byzantine client uploads in place of `honest`.
ParamVector corrupt_message(AttackKind kind, const ParamVector& honest, double gamma, Rng& rng);

/// Copy of `labels` with `rows` corrupted.
std::vector<int> poison_labels(const std::vector<int>& labels, const IndexList& rows, int num_classes,
                               PoisonMode mode, std::uint64_t seed);

/// Copy of the store whose malicious clients' labels are poisoned.
std::shared_ptr<SampleStore> poison_store(const SampleStore& store,
                                          const std::vector<IndexList>& client_rows,
                                          const IndexList& malicious, PoisonMode mode,
                                          std::uint64_t seed);

/// Installs the upload filter for Byzantine kinds; other kinds return the hooks unchanged.
RunHooks apply_attack(RunHooks hooks, const AttackConfig& cfg, const IndexList& malicious,
                      std::uint64_t seed);

}  // namespace flame
