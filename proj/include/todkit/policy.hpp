#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "todkit/dip.hpp"
#include "todkit/expert.hpp"
#include "todkit/nn.hpp"

namespace todkit {

// The four policy structures, least to most constrained:
//   FNN    one flat net over the concatenation of every domain's features
//   HFNN   hand-crafted domain selection, one flat net per domain
//   HGNN   hand-crafted domain selection, one graph net per domain
//   UHGNN  hand-crafted domain selection, one graph net shared by all domains
enum class PolicyKind { kFnn, kHfnn, kHgnn, kUhgnn };

inline std::string_view to_string(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::kFnn: return "fnn";
    case PolicyKind::kHfnn: return "hfnn";
    case PolicyKind::kHgnn: return "hgnn";
    case PolicyKind::kUhgnn: return "uhgnn";
  }
  return "?";
}

inline PolicyKind policy_kind_from_string(std::string_view s) {
  if (s == "fnn") return PolicyKind::kFnn;
  if (s == "hfnn") return PolicyKind::kHfnn;
  if (s == "hgnn") return PolicyKind::kHgnn;
  if (s == "uhgnn") return PolicyKind::kUhgnn;
  throw std::runtime_error("unknown policy kind: " + std::string(s));
}

inline bool kind_is_gnn(PolicyKind kind) {
  return kind == PolicyKind::kHgnn || kind == PolicyKind::kUhgnn;
}

// ---------------------------------------------------------------------------
// Graph network over one I-node and n S-nodes. The graph is fully connected
// and directed with three relation types (S2S, I2S, S2I; no I2I since there
// is a single I-node), and exactly one weight set per relation type, so the
// parameter count does not depend on the number of slots.

struct GnnDims {
  int in_independent = kIndependentDim;
  int in_slot = kPerSlotDim;
  int hidden = 64;
  int out_general = kGeneralActions;
  int out_slot = kSlotActions;
};

struct GnnWeights {
  GnnDims dims;
  nn::DenseLayer input_i;  // independent features -> hidden
  nn::DenseLayer input_s;  // slot features -> hidden, shared by all S-nodes
  nn::DenseLayer msg_s2s;  // hidden -> hidden
  nn::DenseLayer msg_i2s;
  nn::DenseLayer msg_s2i;
  nn::DenseLayer read_i;   // hidden -> general action scores
  nn::DenseLayer read_s;   // hidden -> slot action scores, shared

  explicit GnnWeights(const GnnDims& d = {})
      : dims(d),
        input_i(d.hidden, d.in_independent),
        input_s(d.hidden, d.in_slot),
        msg_s2s(d.hidden, d.hidden),
        msg_i2s(d.hidden, d.hidden),
        msg_s2i(d.hidden, d.hidden),
        read_i(d.out_general, d.hidden),
        read_s(d.out_slot, d.hidden) {}

  void init(RngStream& rng) {
    input_i.init(rng);
    input_s.init(rng);
    msg_s2s.init(rng);
    msg_i2s.init(rng);
    msg_s2i.init(rng);
    read_i.init(rng);
    read_s.init(rng);
  }

  long param_count() const {
    auto count = [](const nn::DenseLayer& l) {
      return static_cast<long>(l.weight.w.size() + l.bias.size());
    };
    return count(input_i) + count(input_s) + count(msg_s2s) + count(msg_i2s) +
           count(msg_s2i) + count(read_i) + count(read_s);
  }
};

struct GnnGrads {
  nn::DenseGrads input_i, input_s, msg_s2s, msg_i2s, msg_s2i, read_i, read_s;

  explicit GnnGrads(const GnnWeights& w)
      : input_i(w.input_i), input_s(w.input_s), msg_s2s(w.msg_s2s),
        msg_i2s(w.msg_i2s), msg_s2i(w.msg_s2i), read_i(w.read_i), read_s(w.read_s) {}

  void zero() {
    input_i.zero();
    input_s.zero();
    msg_s2s.zero();
    msg_i2s.zero();
    msg_s2i.zero();
    read_i.zero();
    read_s.zero();
  }
};

// Intermediate activations kept for the backward pass; buffers are reused
// across samples.
struct GnnTrace {
  int n = 0;
  nn::Vec z0_i, h0_i;
  std::vector<nn::Vec> z0_s, h0_s;
  std::vector<nn::Vec> u;   // msg_s2s applied to each h0_s[j]
  nn::Vec v;                // msg_i2s applied to h0_i
  nn::Vec sum_u, sum_h0s;
  nn::Vec a_i;              // aggregated I-node input, pre-activation
  std::vector<nn::Vec> a_s;
  nn::Vec h1_i;
  std::vector<nn::Vec> h1_s;
  std::vector<std::uint8_t> keep_i;
  std::vector<std::vector<std::uint8_t>> keep_s;
  nn::Vec logits;
  // scratch for the backward pass
  nn::Vec dh1_i, da_i, g_sum, dv, du, dh0_i, dh0_shared, dz, dlocal;
  std::vector<nn::Vec> dh1_s, da_s, dh0_s;
};

// x_independent has dims.in_independent entries; x_slots holds n pointers to
// dims.in_slot entries each. Message passing: every S-node receives from all
// other S-nodes and from the I-node; the I-node receives from all S-nodes.
// Aggregation is the arithmetic mean over the messages a node actually
// receives (n for every node; self-messages are excluded).
inline void gnn_forward(const GnnWeights& w, const double* x_independent,
                        std::span<const double* const> x_slots, bool training,
                        double dropout_rate, RngStream& rng, GnnTrace& t) {
  const int h = w.dims.hidden;
  const int n = static_cast<int>(x_slots.size());
  if (n < 1) throw std::runtime_error("gnn: at least one slot required");
  t.n = n;
  auto resize_all = [&](std::vector<nn::Vec>& vecs, int dim) {
    vecs.resize(static_cast<std::size_t>(n));
    for (auto& v : vecs) v.resize(static_cast<std::size_t>(dim));
  };
  t.z0_i.resize(static_cast<std::size_t>(h));
  t.h0_i.resize(static_cast<std::size_t>(h));
  resize_all(t.z0_s, h);
  resize_all(t.h0_s, h);
  resize_all(t.u, h);
  t.v.resize(static_cast<std::size_t>(h));
  t.sum_u.assign(static_cast<std::size_t>(h), 0.0);
  t.sum_h0s.assign(static_cast<std::size_t>(h), 0.0);
  t.a_i.resize(static_cast<std::size_t>(h));
  resize_all(t.a_s, h);
  t.h1_i.resize(static_cast<std::size_t>(h));
  resize_all(t.h1_s, h);
  t.keep_s.resize(static_cast<std::size_t>(n));

  // Input transform.
  nn::matvec_bias(w.input_i.weight, w.input_i.bias, x_independent, t.z0_i.data());
  for (int k = 0; k < h; ++k) t.h0_i[static_cast<std::size_t>(k)] = std::max(0.0, t.z0_i[static_cast<std::size_t>(k)]);
  for (int j = 0; j < n; ++j) {
    nn::matvec_bias(w.input_s.weight, w.input_s.bias, x_slots[static_cast<std::size_t>(j)],
                    t.z0_s[static_cast<std::size_t>(j)].data());
    for (int k = 0; k < h; ++k) {
      double val = std::max(0.0, t.z0_s[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)]);
      t.h0_s[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)] = val;
      t.sum_h0s[static_cast<std::size_t>(k)] += val;
    }
  }

  // Message sending. Messages share weights per relation, so each sender's
  // outgoing message is computed once and reused by every receiver.
  for (int j = 0; j < n; ++j) {
    nn::matvec_bias(w.msg_s2s.weight, w.msg_s2s.bias, t.h0_s[static_cast<std::size_t>(j)].data(),
                    t.u[static_cast<std::size_t>(j)].data());
    for (int k = 0; k < h; ++k) t.sum_u[static_cast<std::size_t>(k)] += t.u[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)];
  }
  nn::matvec_bias(w.msg_i2s.weight, w.msg_i2s.bias, t.h0_i.data(), t.v.data());

  // Aggregate and update.
  const double inv_n = 1.0 / static_cast<double>(n);
  for (int i = 0; i < n; ++i) {
    nn::Vec& a = t.a_s[static_cast<std::size_t>(i)];
    const nn::Vec& ui = t.u[static_cast<std::size_t>(i)];
    for (int k = 0; k < h; ++k)
      a[static_cast<std::size_t>(k)] =
          (t.sum_u[static_cast<std::size_t>(k)] - ui[static_cast<std::size_t>(k)] + t.v[static_cast<std::size_t>(k)]) * inv_n;
  }
  nn::matvec_bias(w.msg_s2i.weight, w.msg_s2i.bias, t.sum_h0s.data(), t.a_i.data());
  // The bias enters every one of the n averaged messages, so it survives the
  // mean unscaled: a_i = W * sum(h0_s)/n + b.
  for (int k = 0; k < h; ++k)
    t.a_i[static_cast<std::size_t>(k)] =
        (t.a_i[static_cast<std::size_t>(k)] - w.msg_s2i.bias[static_cast<std::size_t>(k)]) * inv_n +
        w.msg_s2i.bias[static_cast<std::size_t>(k)];

  for (int k = 0; k < h; ++k) t.h1_i[static_cast<std::size_t>(k)] = std::max(0.0, t.a_i[static_cast<std::size_t>(k)]);
  nn::dropout_forward(t.h1_i.data(), h, dropout_rate, training, rng, t.keep_i);
  for (int i = 0; i < n; ++i) {
    nn::Vec& h1 = t.h1_s[static_cast<std::size_t>(i)];
    for (int k = 0; k < h; ++k)
      h1[static_cast<std::size_t>(k)] = std::max(0.0, t.a_s[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)]);
    nn::dropout_forward(h1.data(), h, dropout_rate, training, rng, t.keep_s[static_cast<std::size_t>(i)]);
  }

  // Readout: general scores from the I-node, one score block per S-node.
  t.logits.resize(static_cast<std::size_t>(w.dims.out_general + w.dims.out_slot * n));
  nn::matvec_bias(w.read_i.weight, w.read_i.bias, t.h1_i.data(), t.logits.data());
  for (int i = 0; i < n; ++i)
    nn::matvec_bias(w.read_s.weight, w.read_s.bias, t.h1_s[static_cast<std::size_t>(i)].data(),
                    t.logits.data() + w.dims.out_general + w.dims.out_slot * i);
}

inline void gnn_backward(const GnnWeights& w, const double* x_independent,
                         std::span<const double* const> x_slots, double dropout_rate,
                         const nn::Vec& dlogits, GnnTrace& t, GnnGrads& g) {
  const int h = w.dims.hidden;
  const int n = t.n;
  const double inv_n = 1.0 / static_cast<double>(n);

  auto resize_all = [&](std::vector<nn::Vec>& vecs, int dim) {
    vecs.resize(static_cast<std::size_t>(n));
    for (auto& v : vecs) v.assign(static_cast<std::size_t>(dim), 0.0);
  };
  t.dh1_i.assign(static_cast<std::size_t>(h), 0.0);
  resize_all(t.dh1_s, h);
  t.da_i.resize(static_cast<std::size_t>(h));
  resize_all(t.da_s, h);
  t.dh0_i.assign(static_cast<std::size_t>(h), 0.0);
  resize_all(t.dh0_s, h);
  t.dz.resize(static_cast<std::size_t>(h));

  // Readout.
  nn::outer_add(g.read_i.dweight, g.read_i.dbias, dlogits.data(), t.h1_i.data());
  nn::matvec_transpose_add(w.read_i.weight, dlogits.data(), t.dh1_i.data());
  for (int i = 0; i < n; ++i) {
    const double* gi = dlogits.data() + w.dims.out_general + w.dims.out_slot * i;
    nn::outer_add(g.read_s.dweight, g.read_s.dbias, gi, t.h1_s[static_cast<std::size_t>(i)].data());
    nn::matvec_transpose_add(w.read_s.weight, gi, t.dh1_s[static_cast<std::size_t>(i)].data());
  }

  // Update: dropout then ReLU on the aggregated pre-activation.
  nn::dropout_backward(t.dh1_i.data(), h, dropout_rate, t.keep_i);
  nn::relu_backward(t.a_i.data(), t.dh1_i.data(), t.da_i.data(), h);
  for (int i = 0; i < n; ++i) {
    nn::Vec& d = t.dh1_s[static_cast<std::size_t>(i)];
    nn::dropout_backward(d.data(), h, dropout_rate, t.keep_s[static_cast<std::size_t>(i)]);
    nn::relu_backward(t.a_s[static_cast<std::size_t>(i)].data(), d.data(),
                      t.da_s[static_cast<std::size_t>(i)].data(), h);
  }

  // I-node aggregation: a_i = msg_s2i(sum h0_s) / n + bias.
  t.dlocal.resize(static_cast<std::size_t>(h));
  for (int k = 0; k < h; ++k)
    t.dlocal[static_cast<std::size_t>(k)] = t.sum_h0s[static_cast<std::size_t>(k)] * inv_n;
  nn::outer_add(g.msg_s2i.dweight, g.msg_s2i.dbias, t.da_i.data(), t.dlocal.data());
  t.dh0_shared.assign(static_cast<std::size_t>(h), 0.0);
  nn::matvec_transpose_add(w.msg_s2i.weight, t.da_i.data(), t.dh0_shared.data());
  // Every S-node contributed identically through the sum.
  for (int j = 0; j < n; ++j) {
    nn::Vec& d = t.dh0_s[static_cast<std::size_t>(j)];
    for (int k = 0; k < h; ++k) d[static_cast<std::size_t>(k)] += t.dh0_shared[static_cast<std::size_t>(k)] * inv_n;
  }

  // S-node aggregation: a_s[i] = (sum_u - u[i] + v) / n.
  t.g_sum.assign(static_cast<std::size_t>(h), 0.0);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < h; ++k)
      t.g_sum[static_cast<std::size_t>(k)] += t.da_s[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
  t.dv.resize(static_cast<std::size_t>(h));
  for (int k = 0; k < h; ++k) t.dv[static_cast<std::size_t>(k)] = t.g_sum[static_cast<std::size_t>(k)] * inv_n;
  nn::outer_add(g.msg_i2s.dweight, g.msg_i2s.dbias, t.dv.data(), t.h0_i.data());
  nn::matvec_transpose_add(w.msg_i2s.weight, t.dv.data(), t.dh0_i.data());

  t.du.resize(static_cast<std::size_t>(h));
  for (int j = 0; j < n; ++j) {
    const nn::Vec& daj = t.da_s[static_cast<std::size_t>(j)];
    for (int k = 0; k < h; ++k)
      t.du[static_cast<std::size_t>(k)] =
          (t.g_sum[static_cast<std::size_t>(k)] - daj[static_cast<std::size_t>(k)]) * inv_n;
    nn::outer_add(g.msg_s2s.dweight, g.msg_s2s.dbias, t.du.data(), t.h0_s[static_cast<std::size_t>(j)].data());
    nn::matvec_transpose_add(w.msg_s2s.weight, t.du.data(), t.dh0_s[static_cast<std::size_t>(j)].data());
  }

  // Input transform.
  nn::relu_backward(t.z0_i.data(), t.dh0_i.data(), t.dz.data(), h);
  nn::outer_add(g.input_i.dweight, g.input_i.dbias, t.dz.data(), x_independent);
  for (int j = 0; j < n; ++j) {
    nn::relu_backward(t.z0_s[static_cast<std::size_t>(j)].data(), t.dh0_s[static_cast<std::size_t>(j)].data(),
                      t.dz.data(), h);
    nn::outer_add(g.input_s.dweight, g.input_s.dbias, t.dz.data(), x_slots[static_cast<std::size_t>(j)]);
  }
}

// ---------------------------------------------------------------------------
// Two-hidden-layer feed-forward net (flat and per-domain hierarchical
// variants), 128 neurons per hidden layer by default.

struct MlpParams {
  nn::DenseLayer l1, l2, l3;

  MlpParams() = default;
  MlpParams(int in, int hidden, int out) : l1(hidden, in), l2(hidden, hidden), l3(out, hidden) {}

  void init(RngStream& rng) {
    l1.init(rng);
    l2.init(rng);
    l3.init(rng);
  }

  long param_count() const {
    auto count = [](const nn::DenseLayer& l) {
      return static_cast<long>(l.weight.w.size() + l.bias.size());
    };
    return count(l1) + count(l2) + count(l3);
  }
};

struct MlpGrads {
  nn::DenseGrads g1, g2, g3;

  explicit MlpGrads(const MlpParams& p) : g1(p.l1), g2(p.l2), g3(p.l3) {}

  void zero() {
    g1.zero();
    g2.zero();
    g3.zero();
  }
};

struct MlpTrace {
  nn::Vec z1, h1, z2, h2, logits;
  std::vector<std::uint8_t> keep1, keep2;
  nn::Vec dh2, dz2, dh1, dz1;
};

inline void mlp_forward(const MlpParams& p, const nn::Vec& x, bool training,
                        double dropout_rate, RngStream& rng, MlpTrace& t) {
  p.l1.forward(x, t.z1);
  t.h1 = t.z1;
  nn::relu_inplace(t.h1.data(), static_cast<int>(t.h1.size()));
  nn::dropout_forward(t.h1.data(), static_cast<int>(t.h1.size()), dropout_rate, training, rng, t.keep1);
  p.l2.forward(t.h1, t.z2);
  t.h2 = t.z2;
  nn::relu_inplace(t.h2.data(), static_cast<int>(t.h2.size()));
  nn::dropout_forward(t.h2.data(), static_cast<int>(t.h2.size()), dropout_rate, training, rng, t.keep2);
  p.l3.forward(t.h2, t.logits);
}

inline void mlp_backward(const MlpParams& p, const nn::Vec& x, double dropout_rate,
                         const nn::Vec& dlogits, MlpTrace& t, MlpGrads& g) {
  nn::dense_backward(p.l3, t.h2, dlogits, g.g3, &t.dh2);
  nn::dropout_backward(t.dh2.data(), static_cast<int>(t.dh2.size()), dropout_rate, t.keep2);
  t.dz2.resize(t.dh2.size());
  nn::relu_backward(t.z2.data(), t.dh2.data(), t.dz2.data(), static_cast<int>(t.dz2.size()));
  nn::dense_backward(p.l2, t.h1, t.dz2, g.g2, &t.dh1);
  nn::dropout_backward(t.dh1.data(), static_cast<int>(t.dh1.size()), dropout_rate, t.keep1);
  t.dz1.resize(t.dh1.size());
  nn::relu_backward(t.z1.data(), t.dh1.data(), t.dz1.data(), static_cast<int>(t.dz1.size()));
  nn::dense_backward(p.l1, x, t.dz1, g.g1, nullptr);
}

// ---------------------------------------------------------------------------
// Policy handle: kind, parameters, catalog bindings and layout version.

struct Policy {
  PolicyKind kind = PolicyKind::kUhgnn;
  std::uint64_t ont_hash = 0;
  int hidden_gnn = 64;
  int hidden_mlp = 128;
  std::vector<std::string> model_names;   // "global", "shared" or domain names
  std::vector<MlpParams> mlps;            // FNN: 1, HFNN: one per domain
  std::vector<GnnWeights> gnns;           // UHGNN: 1, HGNN: one per domain
  GlobalLayout global;                    // FNN layout
  std::vector<ActionCatalog> catalogs;    // per domain, ontology order

  int model_count() const {
    return static_cast<int>(kind_is_gnn(kind) ? gnns.size() : mlps.size());
  }

  // Which model a sample routed to `domain_index` trains.
  int model_index(int domain_index) const {
    if (kind == PolicyKind::kFnn || kind == PolicyKind::kUhgnn) return 0;
    return domain_index;
  }

  long param_count() const {
    long total = 0;
    for (const auto& m : mlps) total += m.param_count();
    for (const auto& g : gnns) total += g.param_count();
    return total;
  }
};

inline Policy make_policy(PolicyKind kind, const Ontology& ont, RngStream& rng,
                          int hidden_gnn = 64, int hidden_mlp = 128) {
  Policy p;
  p.kind = kind;
  p.ont_hash = ontology_hash(ont);
  p.hidden_gnn = hidden_gnn;
  p.hidden_mlp = hidden_mlp;
  p.global = make_global_layout(ont);
  for (const Domain& d : ont.domains) p.catalogs.push_back(make_catalog(ont, d.name));

  GnnDims gdims;
  gdims.hidden = hidden_gnn;
  switch (kind) {
    case PolicyKind::kFnn: {
      p.model_names.push_back("global");
      p.mlps.emplace_back(p.global.feature_dim(), hidden_mlp, p.global.action_dim());
      p.mlps.back().init(rng);
      break;
    }
    case PolicyKind::kHfnn: {
      for (const Domain& d : ont.domains) {
        int n = static_cast<int>(d.slots.size());
        p.model_names.push_back(d.name);
        p.mlps.emplace_back(kIndependentDim + kPerSlotDim * n, hidden_mlp,
                            kGeneralActions + kSlotActions * n);
        p.mlps.back().init(rng);
      }
      break;
    }
    case PolicyKind::kHgnn: {
      for (const Domain& d : ont.domains) {
        p.model_names.push_back(d.name);
        p.gnns.emplace_back(gdims);
        p.gnns.back().init(rng);
      }
      break;
    }
    case PolicyKind::kUhgnn: {
      p.model_names.push_back("shared");
      p.gnns.emplace_back(gdims);
      p.gnns.back().init(rng);
      break;
    }
  }
  return p;
}

// One behavior-cloning example: featurized state, action mask and the
// demonstrated action's index.
struct Sample {
  int domain_index = 0;  // routing for hierarchical kinds
  int n_slots = 0;       // graph size for GNN kinds (0 for the flat kind)
  std::vector<double> features;
  std::vector<std::uint8_t> mask;
  int target = 0;
};

namespace detail {

inline std::vector<const double*> slot_pointers(const Sample& s) {
  std::vector<const double*> ptr(static_cast<std::size_t>(s.n_slots));
  for (int i = 0; i < s.n_slots; ++i)
    ptr[static_cast<std::size_t>(i)] = s.features.data() + kIndependentDim + kPerSlotDim * i;
  return ptr;
}

}  // namespace detail

struct PolicyTraces {
  GnnTrace gnn;
  MlpTrace mlp;
};

// Logits for one sample; the returned reference lives in `traces`.
inline const nn::Vec& policy_logits(const Policy& p, const Sample& s, bool training,
                                    double dropout_rate, RngStream& rng, PolicyTraces& traces) {
  if (kind_is_gnn(p.kind)) {
    const GnnWeights& w = p.gnns[static_cast<std::size_t>(p.model_index(s.domain_index))];
    std::vector<const double*> slots = detail::slot_pointers(s);
    gnn_forward(w, s.features.data(), slots, training, dropout_rate, rng, traces.gnn);
    return traces.gnn.logits;
  }
  const MlpParams& m = p.mlps[static_cast<std::size_t>(p.model_index(s.domain_index))];
  mlp_forward(m, s.features, training, dropout_rate, rng, traces.mlp);
  return traces.mlp.logits;
}

// ---------------------------------------------------------------------------
// Action selection: hand-crafted domain routing, masked greedy decode.
// With temperature > 0 the act is sampled from the tempered distribution.

inline SystemAct policy_act(const Policy& p, const DialogueState& state,
                            const Ontology& ont, const Database& db,
                            RngStream* sample_rng = nullptr, double temperature = 0.0) {
  (void)db;
  std::string active = select_active_domain(state, ont);
  int di = ont.domain_index(active);

  Sample s;
  s.domain_index = di;
  if (p.kind == PolicyKind::kFnn) {
    s.features = global_featurize(state, active, ont, p.global);
    s.mask = global_valid_mask(state, active, ont, p.global);
  } else {
    DipState dip = featurize(state, active, ont);
    s.n_slots = static_cast<int>(dip.per_slot.size());
    s.features = flatten(dip);
    s.mask = valid_mask(state, active, p.catalogs[static_cast<std::size_t>(di)], ont);
  }

  PolicyTraces traces;
  RngStream unused(0);
  const nn::Vec& logits = policy_logits(p, s, false, 0.0, unused, traces);

  int chosen = -1;
  if (temperature > 0.0 && sample_rng) {
    nn::Vec scaled = logits;
    for (double& v : scaled) v /= temperature;
    nn::Vec probs;
    nn::masked_softmax(scaled, s.mask, probs);
    double r = sample_rng->next_double();
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      acc += probs[i];
      if (s.mask[i] && r < acc) {
        chosen = static_cast<int>(i);
        break;
      }
    }
  }
  if (chosen < 0) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < logits.size(); ++i)
      if (s.mask[i] && logits[i] > best) {
        best = logits[i];
        chosen = static_cast<int>(i);
      }
  }
  if (chosen < 0) throw std::runtime_error("policy_act: empty action mask");

  if (p.kind == PolicyKind::kFnn) return global_index_to_act(chosen, ont, active, p.global);
  return index_to_act(chosen, p.catalogs[static_cast<std::size_t>(di)]);
}

// ---------------------------------------------------------------------------
// Training. Gradients from every sample of a batch accumulate into the
// touched models (for the shared-GNN kind this is the collaborative update:
// all domains pull on the same weights); each touched model then takes one
// Adam step on the batch-mean gradient.

struct PolicyTrainer {
  Policy* policy = nullptr;
  double dropout_rate = 0.1;
  std::vector<MlpGrads> mlp_grads;
  std::vector<GnnGrads> gnn_grads;
  std::vector<nn::AdamState> adam;
  PolicyTraces traces;
  RngStream dropout_rng;

  PolicyTrainer(Policy& p, double dropout, const nn::AdamConfig& adam_cfg,
                std::uint64_t dropout_seed)
      : policy(&p), dropout_rate(dropout), dropout_rng(RngStream(dropout_seed).child(0xd409)) {
    for (auto& m : p.mlps) mlp_grads.emplace_back(m);
    for (auto& g : p.gnns) gnn_grads.emplace_back(g);
    adam.resize(static_cast<std::size_t>(p.model_count()));
    for (auto& a : adam) a.cfg = adam_cfg;
  }
};

namespace detail {

inline void collect_params(nn::DenseLayer& l, nn::DenseGrads& g, const std::string& name,
                           std::vector<nn::ParamRef>& out) {
  out.push_back({name + ".weight", &l.weight.w, &g.dweight.w});
  out.push_back({name + ".bias", &l.bias, &g.dbias});
}

inline std::vector<nn::ParamRef> model_params(Policy& p, PolicyTrainer& tr, int model) {
  std::vector<nn::ParamRef> out;
  if (kind_is_gnn(p.kind)) {
    GnnWeights& w = p.gnns[static_cast<std::size_t>(model)];
    GnnGrads& g = tr.gnn_grads[static_cast<std::size_t>(model)];
    collect_params(w.input_i, g.input_i, "input_i", out);
    collect_params(w.input_s, g.input_s, "input_s", out);
    collect_params(w.msg_s2s, g.msg_s2s, "msg_s2s", out);
    collect_params(w.msg_i2s, g.msg_i2s, "msg_i2s", out);
    collect_params(w.msg_s2i, g.msg_s2i, "msg_s2i", out);
    collect_params(w.read_i, g.read_i, "read_i", out);
    collect_params(w.read_s, g.read_s, "read_s", out);
  } else {
    MlpParams& m = p.mlps[static_cast<std::size_t>(model)];
    MlpGrads& g = tr.mlp_grads[static_cast<std::size_t>(model)];
    collect_params(m.l1, g.g1, "l1", out);
    collect_params(m.l2, g.g2, "l2", out);
    collect_params(m.l3, g.g3, "l3", out);
  }
  return out;
}

}  // namespace detail

// Forward + masked cross-entropy + backward over a batch, then a single Adam
// update per touched model. Returns the mean loss.
inline double train_step(PolicyTrainer& tr, std::span<const Sample* const> batch) {
  if (batch.empty()) throw std::runtime_error("train_step: empty batch");
  Policy& p = *tr.policy;
  for (auto& g : tr.mlp_grads) g.zero();
  for (auto& g : tr.gnn_grads) g.zero();

  std::vector<std::uint8_t> touched(static_cast<std::size_t>(p.model_count()), 0);
  double total_loss = 0.0;
  for (const Sample* s : batch) {
    int model = p.model_index(s->domain_index);
    touched[static_cast<std::size_t>(model)] = 1;
    const nn::Vec& logits =
        policy_logits(p, *s, true, tr.dropout_rate, tr.dropout_rng, tr.traces);
    nn::SoftmaxXent xent = nn::masked_softmax_xent(logits, s->mask, s->target);
    total_loss += xent.loss;
    if (kind_is_gnn(p.kind)) {
      std::vector<const double*> slots = detail::slot_pointers(*s);
      gnn_backward(p.gnns[static_cast<std::size_t>(model)], s->features.data(), slots,
                   tr.dropout_rate, xent.dlogits, tr.traces.gnn,
                   tr.gnn_grads[static_cast<std::size_t>(model)]);
    } else {
      mlp_backward(p.mlps[static_cast<std::size_t>(model)], s->features, tr.dropout_rate,
                   xent.dlogits, tr.traces.mlp, tr.mlp_grads[static_cast<std::size_t>(model)]);
    }
  }

  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (int model = 0; model < p.model_count(); ++model) {
    if (!touched[static_cast<std::size_t>(model)]) continue;
    std::vector<nn::ParamRef> params = detail::model_params(p, tr, model);
    for (nn::ParamRef& ref : params)
      for (double& v : *ref.grad) v *= inv_b;
    nn::adam_step(params, tr.adam[static_cast<std::size_t>(model)]);
  }
  double loss = total_loss * inv_b;
  if (!std::isfinite(loss)) throw std::runtime_error("train_step: non-finite loss");
  return loss;
}

}  // namespace todkit
