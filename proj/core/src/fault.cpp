#include "fccnn/fault.hpp"

#include <array>
#include <atomic>
#include <utility>

namespace fccnn::fault {

namespace {

std::atomic<Mutation> g_active{Mutation::None};

constexpr std::array<std::pair<Mutation, std::string_view>, 4> kNames{{
    {Mutation::None, "none"},
    {Mutation::FlipPhiSign, "flip_phi_sign"},
    {Mutation::FlipWSign, "flip_w_sign"},
    {Mutation::DropBoundaryFactor, "drop_boundary_factor"},
}};

}  // namespace

Mutation active() noexcept { return g_active.load(std::memory_order_relaxed); }
void set_active(Mutation m) noexcept { g_active.store(m, std::memory_order_relaxed); }

std::string_view name(Mutation m) noexcept {
  for (const auto& [k, v] : kNames) {
    if (k == m) return v;
  }
  return "unknown";
}

std::optional<Mutation> parse(std::string_view text) noexcept {
  for (const auto& [k, v] : kNames) {
    if (v == text) return k;
  }
  return std::nullopt;
}

}  // namespace fccnn::fault
