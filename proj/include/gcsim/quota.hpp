#pragma once

// Per-tenant, per-GPU-model quotas with shared (borrowing) and isolated
// modes, plus the borrow ledger.

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "gcsim/core.hpp"
#include "gcsim/topology.hpp"

namespace gcsim {

enum class QuotaMode { kShared, kIsolated };

inline const char* to_string(QuotaMode m) { return m == QuotaMode::kShared ? "shared" : "isolated"; }

struct TenantQuotaConfig {
  std::string tenant_id;
  QuotaMode mode = QuotaMode::kShared;
  std::map<std::string, int> quotas;  // GPU model -> GPUs
};

inline std::vector<TenantQuotaConfig> parse_quota_config(const nlohmann::json& doc) {
  const nlohmann::json& list = doc.is_object() ? doc.at("tenants") : doc;
  if (!list.is_array()) throw InputError("quota config: expected a 'tenants' array");
  std::vector<TenantQuotaConfig> out;
  for (const auto& jt : list) {
    TenantQuotaConfig t;
    try {
      t.tenant_id = jt.at("tenant_id").get<std::string>();
      const auto mode = jt.value("mode", std::string("shared"));
      if (mode == "shared") {
        t.mode = QuotaMode::kShared;
      } else if (mode == "isolated") {
        t.mode = QuotaMode::kIsolated;
      } else {
        throw InputError("tenant '" + t.tenant_id + "': unknown quota mode '" + mode + "'");
      }
      for (auto it = jt.at("quotas").begin(); it != jt.at("quotas").end(); ++it) {
        const int q = it.value().get<int>();
        if (q < 0) throw InputError("tenant '" + t.tenant_id + "': negative quota");
        t.quotas[it.key()] = q;
      }
    } catch (const nlohmann::json::exception& e) {
      throw InputError(std::string("quota config: ") + e.what());
    }
    for (const auto& prev : out) {
      if (prev.tenant_id == t.tenant_id) throw InputError("quota config: duplicate tenant '" + t.tenant_id + "'");
    }
    out.push_back(std::move(t));
  }
  return out;
}

inline std::vector<TenantQuotaConfig> load_quota_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open quota file '" + path + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("quota file '" + path + "': " + e.what());
  }
  return parse_quota_config(doc);
}

inline nlohmann::json quota_config_to_json(const std::vector<TenantQuotaConfig>& cfg) {
  nlohmann::json tenants = nlohmann::json::array();
  for (const auto& t : cfg) {
    tenants.push_back({{"tenant_id", t.tenant_id}, {"mode", to_string(t.mode)}, {"quotas", t.quotas}});
  }
  return {{"tenants", tenants}};
}

struct Borrow {
  TenantIdx lender = 0;
  GpuTypeIdx type = 0;
  Milli amount = 0;

  friend bool operator==(const Borrow&, const Borrow&) = default;
};

/// Outcome of static quota admission for one dispatch unit. `own` is charged
/// to the tenant's own quota, `borrows` to lenders.
struct QuotaGrant {
  bool pass = false;
  std::map<GpuTypeIdx, Milli> own;
  std::vector<Borrow> borrows;
  std::string reason;

  Milli borrowed_from(TenantIdx lender, GpuTypeIdx type) const {
    Milli m = 0;
    for (const auto& b : borrows) {
      if (b.lender == lender && b.type == type) m += b.amount;
    }
    return m;
  }
};

/// Quota state for every tenant. A tenant's demand of one GPU model is met
/// either entirely from its own quota or, in shared mode, entirely from
/// borrowed quota, so a borrowing unit is reclaimable as a whole. Only
/// shared-mode tenants lend.
class QuotaLedger {
 public:
  QuotaLedger() = default;

  QuotaLedger(const std::vector<TenantQuotaConfig>& cfg, const ClusterTopology& topo)
      : enabled_(true), type_count_(topo.gpu_types.size()) {
    for (const auto& t : cfg) {
      TenantState st;
      st.id = t.tenant_id;
      st.mode = t.mode;
      st.quota.assign(type_count_, 0);
      st.own_used.assign(type_count_, 0);
      st.lent_out.assign(type_count_, 0);
      st.borrowed_in.assign(type_count_, 0);
      for (const auto& [type, gpus] : t.quotas) {
        if (auto idx = topo.find_gpu_type(type)) st.quota[*idx] = gpus_to_milli(static_cast<std::int64_t>(gpus));
      }
      tenants_.push_back(std::move(st));
    }
  }

  bool enabled() const { return enabled_; }
  std::size_t tenant_count() const { return tenants_.size(); }

  std::optional<TenantIdx> find_tenant(const std::string& id) const {
    for (TenantIdx i = 0; i < tenants_.size(); ++i) {
      if (tenants_[i].id == id) return i;
    }
    return std::nullopt;
  }

  const std::string& tenant_id(TenantIdx t) const { return tenants_.at(t).id; }
  QuotaMode mode(TenantIdx t) const { return tenants_.at(t).mode; }
  Milli quota(TenantIdx t, GpuTypeIdx g) const { return tenants_.at(t).quota.at(g); }
  Milli own_used(TenantIdx t, GpuTypeIdx g) const { return tenants_.at(t).own_used.at(g); }
  Milli lent_out(TenantIdx t, GpuTypeIdx g) const { return tenants_.at(t).lent_out.at(g); }
  Milli borrowed_in(TenantIdx t, GpuTypeIdx g) const { return tenants_.at(t).borrowed_in.at(g); }
  Milli used(TenantIdx t, GpuTypeIdx g) const { return own_used(t, g) + borrowed_in(t, g); }

  /// Quota the tenant can still spend on itself.
  Milli own_free(TenantIdx t, GpuTypeIdx g) const {
    const auto& st = tenants_.at(t);
    return std::max<Milli>(0, st.quota[g] - st.own_used[g] - st.lent_out[g]);
  }

  /// Quota a shared-mode tenant could lend right now.
  Milli lendable(TenantIdx t, GpuTypeIdx g) const {
    if (tenants_.at(t).mode != QuotaMode::kShared) return 0;
    return own_free(t, g);
  }

  /// Static quota admission. A GPU model with no quota entry has quota 0.
  QuotaGrant static_quota_admit(TenantIdx tenant, const std::map<GpuTypeIdx, Milli>& demand) const {
    QuotaGrant g;
    if (!enabled_) {
      g.pass = true;
      return g;
    }
    if (tenant >= tenants_.size()) throw InputError("static_quota_admit: unknown tenant");
    const auto& st = tenants_[tenant];
    for (const auto& [type, need] : demand) {
      if (need <= 0) continue;
      if (type >= type_count_) throw InputError("static_quota_admit: unknown gpu type");
      if (need <= own_free(tenant, type)) {
        g.own[type] = need;
        continue;
      }
      if (st.mode == QuotaMode::kIsolated) {
        g.reason = "isolated quota exceeded for gpu type " + std::to_string(type);
        g.own.clear();
        g.borrows.clear();
        return g;
      }
      // Lenders with the most spare quota first, tenant order on ties.
      std::vector<std::pair<Milli, TenantIdx>> lenders;
      for (TenantIdx l = 0; l < tenants_.size(); ++l) {
        if (l == tenant) continue;
        const Milli spare = lendable(l, type);
        if (spare > 0) lenders.emplace_back(-spare, l);
      }
      std::sort(lenders.begin(), lenders.end());
      Milli remaining = need;
      for (const auto& [neg_spare, l] : lenders) {
        const Milli take = std::min(remaining, -neg_spare);
        g.borrows.push_back(Borrow{l, type, take});
        remaining -= take;
        if (remaining == 0) break;
      }
      if (remaining > 0) {
        g.reason = "quota exhausted for gpu type " + std::to_string(type) + " (own and borrowable)";
        g.own.clear();
        g.borrows.clear();
        return g;
      }
    }
    g.pass = true;
    return g;
  }

  void commit(TenantIdx tenant, const QuotaGrant& g) {
    if (!enabled_) return;
    auto& st = tenants_.at(tenant);
    for (const auto& [type, m] : g.own) st.own_used[type] += m;
    for (const auto& b : g.borrows) {
      st.borrowed_in[b.type] += b.amount;
      tenants_.at(b.lender).lent_out[b.type] += b.amount;
    }
  }

  /// Returns own usage and repays every borrow of the grant.
  void release(TenantIdx tenant, const QuotaGrant& g) {
    if (!enabled_) return;
    auto& st = tenants_.at(tenant);
    for (const auto& [type, m] : g.own) {
      if (st.own_used[type] < m) throw StateError("quota release underflow");
      st.own_used[type] -= m;
    }
    for (const auto& b : g.borrows) {
      auto& lender = tenants_.at(b.lender);
      if (st.borrowed_in[b.type] < b.amount || lender.lent_out[b.type] < b.amount) {
        throw StateError("borrow ledger underflow");
      }
      st.borrowed_in[b.type] -= b.amount;
      lender.lent_out[b.type] -= b.amount;
    }
  }

  /// Quota the lender must win back so `need` fits its own quota, or 0 if
  /// loans are not what blocks it.
  Milli reclaim_needed(TenantIdx lender, GpuTypeIdx type, Milli need) const {
    if (!enabled_) return 0;
    const auto& st = tenants_.at(lender);
    const Milli headroom = st.quota[type] - st.own_used[type];
    if (need > headroom || st.lent_out[type] == 0) return 0;
    return std::max<Milli>(0, need - (headroom - st.lent_out[type]));
  }

  /// Empty when every invariant holds, else a description of the first
  /// violation.
  std::string check_invariants() const {
    if (!enabled_) return {};
    for (GpuTypeIdx g = 0; g < type_count_; ++g) {
      Milli lent = 0, borrowed = 0;
      for (const auto& st : tenants_) {
        lent += st.lent_out[g];
        borrowed += st.borrowed_in[g];
        if (st.own_used[g] + st.lent_out[g] > st.quota[g]) {
          return "tenant '" + st.id + "' own usage plus loans exceed quota";
        }
        if (st.mode == QuotaMode::kIsolated && (st.own_used[g] > st.quota[g] || st.borrowed_in[g] != 0)) {
          return "isolated tenant '" + st.id + "' exceeds its quota";
        }
      }
      if (lent != borrowed) return "borrow ledger out of balance for gpu type " + std::to_string(g);
    }
    return {};
  }

 private:
  struct TenantState {
    std::string id;
    QuotaMode mode = QuotaMode::kShared;
    std::vector<Milli> quota, own_used, lent_out, borrowed_in;
  };

  bool enabled_ = false;
  std::size_t type_count_ = 0;
  std::vector<TenantState> tenants_;
};

}  // namespace gcsim
