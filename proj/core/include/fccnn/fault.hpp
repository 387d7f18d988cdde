#pragma once

#include <optional>
#include <string_view>

namespace fccnn::fault {

/// Deliberate backward-pass corruptions used to prove that the gradient
/// checks can fail. Production code never sets anything but None.
enum class Mutation {
  None,
  FlipPhiSign,          // ccrf backward_phi returns +dL/dZs (x) Zc
  FlipWSign,            // ccrf backward_w negates its result
  DropBoundaryFactor,   // pool_pairwise_backward skips the 1/|B_pq| scaling
};

Mutation active() noexcept;
void set_active(Mutation m) noexcept;

std::string_view name(Mutation m) noexcept;
std::optional<Mutation> parse(std::string_view text) noexcept;

/// Installs a mutation for the lifetime of the guard.
class ScopedMutation {
 public:
  explicit ScopedMutation(Mutation m) noexcept : previous_(active()) { set_active(m); }
  ~ScopedMutation() { set_active(previous_); }
  ScopedMutation(const ScopedMutation&) = delete;
  ScopedMutation& operator=(const ScopedMutation&) = delete;

 private:
  Mutation previous_;
};

}  // namespace fccnn::fault
