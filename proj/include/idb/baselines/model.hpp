#pragma once

// Tagged union over every baseline kind, plus checkpoints.
//
// Baseline checkpoint layout (little-endian):
//   magic "IDBB", u32 version, kind string, f64 inner_lr, u32 inner_steps,
//   f64 outer_lr, u32 k, u32 count, then `count` times: u64 sequence id
//   followed by a parameter checkpoint.

#include <istream>
#include <ostream>
#include <string>
#include <variant>

#include "idb/baselines/meta.hpp"
#include "idb/baselines/multi_value.hpp"
#include "idb/baselines/oracle.hpp"
#include "idb/baselines/state_value.hpp"
#include "idb/nn/checkpoint.hpp"

namespace idb {

enum class BaselineKind { none, state, multi, meta, oracle };

inline std::string kind_name(BaselineKind k) {
  switch (k) {
    case BaselineKind::none: return "none";
    case BaselineKind::state: return "state";
    case BaselineKind::multi: return "multi";
    case BaselineKind::meta: return "meta";
    case BaselineKind::oracle: return "oracle";
  }
  return "?";
}

inline BaselineKind parse_baseline_kind(const std::string& s) {
  for (auto k : {BaselineKind::none, BaselineKind::state, BaselineKind::multi, BaselineKind::meta,
                 BaselineKind::oracle})
    if (kind_name(k) == s) return k;
  throw Error("unknown baseline kind '" + s + "'");
}

using BaselineModel =
    std::variant<NoBaseline, StateValueBaseline, MultiValueBaseline, MetaBaseline, OracleBaseline>;

inline BaselineKind kind_of(const BaselineModel& m) {
  return static_cast<BaselineKind>(m.index());
}

/// True when per-step values need the rollouts grouped by input sequence.
inline bool needs_grouping(BaselineKind k) { return k == BaselineKind::multi || k == BaselineKind::meta; }

inline void write_baseline(std::ostream& os, const BaselineModel& model) {
  const BaselineKind kind = kind_of(model);
  if (kind == BaselineKind::oracle || kind == BaselineKind::none)
    throw Error("baseline kind '" + kind_name(kind) + "' has no parameters to save");
  os.write("IDBB", 4);
  nn::io::put<std::uint32_t>(os, nn::kCheckpointVersion);
  nn::io::put_string(os, kind_name(kind));
  MetaConfig mc;
  if (const auto* m = std::get_if<MetaBaseline>(&model)) mc = m->config();
  nn::io::put<double>(os, mc.inner_lr);
  nn::io::put<std::uint32_t>(os, static_cast<std::uint32_t>(mc.inner_steps));
  nn::io::put<double>(os, mc.outer_lr);
  nn::io::put<std::uint32_t>(os, static_cast<std::uint32_t>(mc.rollouts_per_sequence));
  if (const auto* s = std::get_if<StateValueBaseline>(&model)) {
    nn::io::put<std::uint32_t>(os, 1);
    nn::io::put<std::uint64_t>(os, 0);
    nn::write_params(os, s->params(), "state");
  } else if (const auto* m = std::get_if<MetaBaseline>(&model)) {
    nn::io::put<std::uint32_t>(os, 1);
    nn::io::put<std::uint64_t>(os, 0);
    nn::write_params(os, m->params(), "meta");
  } else {
    const auto& mv = std::get<MultiValueBaseline>(model);
    nn::io::put<std::uint32_t>(os, static_cast<std::uint32_t>(mv.size()));
    for (std::size_t i = 0; i < mv.size(); ++i) {
      nn::io::put<std::uint64_t>(os, mv.ids()[i]);
      nn::write_params(os, mv.network_at(i), "multi");
    }
  }
  if (!os) throw Error("baseline checkpoint write failed");
}

/// `value_lr` seeds the fresh optimizer state of restored networks.
inline BaselineModel read_baseline(std::istream& is, double value_lr) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "IDBB") throw Error("not a baseline checkpoint");
  if (nn::io::get<std::uint32_t>(is) != nn::kCheckpointVersion) throw Error("unsupported baseline checkpoint version");
  const BaselineKind kind = parse_baseline_kind(nn::io::get_string(is));
  MetaConfig mc;
  mc.inner_lr = nn::io::get<double>(is);
  mc.inner_steps = static_cast<int>(nn::io::get<std::uint32_t>(is));
  mc.outer_lr = nn::io::get<double>(is);
  mc.rollouts_per_sequence = static_cast<int>(nn::io::get<std::uint32_t>(is));
  const auto count = nn::io::get<std::uint32_t>(is);
  if (count == 0 || count > (1u << 20)) throw Error("baseline checkpoint has invalid network count");
  std::vector<SequenceId> ids;
  std::vector<nn::MlpParams> nets;
  for (std::uint32_t i = 0; i < count; ++i) {
    ids.push_back(nn::io::get<std::uint64_t>(is));
    nets.push_back(nn::read_params(is).params);
  }
  switch (kind) {
    case BaselineKind::state: {
      StateValueBaseline s(nets[0].config(), value_lr, 0);
      s.restore(nets[0]);
      return s;
    }
    case BaselineKind::meta: {
      MetaBaseline m(nets[0].config(), mc, 0);
      m.restore(nets[0]);
      return m;
    }
    case BaselineKind::multi: {
      MultiValueBaseline mv(ids, nets[0].config(), value_lr, 0);
      for (std::size_t i = 0; i < nets.size(); ++i) mv.restore(i, nets[i], value_lr);
      return mv;
    }
    default: throw Error("baseline checkpoint has an unsupported kind");
  }
}

}  // namespace idb
