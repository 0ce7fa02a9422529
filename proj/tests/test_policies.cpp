#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "test_util.hpp"
#include "todkit/harness.hpp"
#include "todkit/policy.hpp"
#include "todkit/policy_io.hpp"

using namespace todkit;
using nn::Vec;

namespace {

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

void fill_dense(nn::DenseLayer& l, double value) {
  for (double& w : l.weight.w) w = value;
  for (double& b : l.bias) b = 0.0;
}

Sample random_sample(const Policy& p, const Ontology& ont, RngStream& rng) {
  Sample s;
  s.domain_index = static_cast<int>(rng.next_below(ont.domains.size()));
  if (p.kind == PolicyKind::kFnn) {
    s.n_slots = 0;
    s.features.resize(static_cast<std::size_t>(p.global.feature_dim()));
    s.mask.resize(static_cast<std::size_t>(p.global.action_dim()));
  } else {
    s.n_slots = static_cast<int>(ont.domains[static_cast<std::size_t>(s.domain_index)].slots.size());
    s.features.resize(static_cast<std::size_t>(kIndependentDim + kPerSlotDim * s.n_slots));
    s.mask.resize(static_cast<std::size_t>(kGeneralActions + kSlotActions * s.n_slots));
  }
  // Continuous feature values keep pre-activations away from the ReLU kink,
  // where central differences are ill-defined.
  for (double& f : s.features) f = rng.next_uniform(-1.0, 1.0);
  for (auto& m : s.mask) m = rng.next_bernoulli(0.8);
  s.target = static_cast<int>(rng.next_below(s.mask.size()));
  s.mask[static_cast<std::size_t>(s.target)] = 1;
  return s;
}

// Analytic gradient of the masked cross-entropy loss for one sample,
// flattened in model_params order.
std::vector<Vec> analytic_grads(Policy& p, PolicyTrainer& tr, const Sample& s) {
  for (auto& g : tr.mlp_grads) g.zero();
  for (auto& g : tr.gnn_grads) g.zero();
  RngStream rng(0);
  const Vec& logits = policy_logits(p, s, true, 0.0, rng, tr.traces);
  nn::SoftmaxXent xent = nn::masked_softmax_xent(logits, s.mask, s.target);
  int model = p.model_index(s.domain_index);
  if (kind_is_gnn(p.kind)) {
    std::vector<const double*> slots = detail::slot_pointers(s);
    gnn_backward(p.gnns[static_cast<std::size_t>(model)], s.features.data(), slots, 0.0,
                 xent.dlogits, tr.traces.gnn, tr.gnn_grads[static_cast<std::size_t>(model)]);
  } else {
    mlp_backward(p.mlps[static_cast<std::size_t>(model)], s.features, 0.0, xent.dlogits,
                 tr.traces.mlp, tr.mlp_grads[static_cast<std::size_t>(model)]);
  }
  std::vector<Vec> out;
  for (nn::ParamRef& ref : detail::model_params(p, tr, model)) out.push_back(*ref.grad);
  return out;
}

double sample_loss(Policy& p, const Sample& s, PolicyTraces& traces) {
  RngStream rng(0);
  const Vec& logits = policy_logits(p, s, true, 0.0, rng, traces);
  return nn::masked_softmax_xent(logits, s.mask, s.target).loss;
}

}  // namespace

TEST_CASE("toy graph net forward matches the hand calculation") {
  // One slot, two hidden units, every weight 1/2, every bias 0, all inputs 1.
  //   h0 = relu(0.5 * 1) = [0.5, 0.5] at both nodes
  //   every message = 0.5*0.5 + 0.5*0.5 = 0.5 per unit
  //   S-node receives only the I-node message -> a_s = [0.5, 0.5]
  //   I-node receives the S-node message     -> a_i = [0.5, 0.5]
  //   readout: 0.5*0.5 + 0.5*0.5 = 0.5 per block
  GnnDims dims;
  dims.in_independent = 1;
  dims.in_slot = 1;
  dims.hidden = 2;
  dims.out_general = 1;
  dims.out_slot = 1;
  GnnWeights w(dims);
  fill_dense(w.input_i, 0.5);
  fill_dense(w.input_s, 0.5);
  fill_dense(w.msg_s2s, 0.5);
  fill_dense(w.msg_i2s, 0.5);
  fill_dense(w.msg_s2i, 0.5);
  fill_dense(w.read_i, 0.5);
  fill_dense(w.read_s, 0.5);

  double xi = 1.0, xs = 1.0;
  const double* slot_ptr = &xs;
  std::span<const double* const> slots(&slot_ptr, 1);
  GnnTrace t;
  RngStream rng(0);
  gnn_forward(w, &xi, slots, false, 0.0, rng, t);
  REQUIRE(t.logits.size() == 2);
  CHECK(t.logits[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(t.logits[1] == doctest::Approx(0.5).epsilon(1e-12));

  Vec probs;
  nn::masked_softmax(t.logits, {1, 1}, probs);
  CHECK(probs[0] == doctest::Approx(0.5));
}

TEST_CASE("identical slot features produce identical slot logit blocks") {
  GnnWeights w;
  RngStream rng(31);
  w.init(rng);
  std::vector<double> indep(21, 0.0);
  indep[17] = 1.0;
  std::vector<double> slot_feats{1, 0, 0, 0, 0, 1, 1, 0};
  std::vector<const double*> slots{slot_feats.data(), slot_feats.data(), slot_feats.data()};
  GnnTrace t;
  gnn_forward(w, indep.data(), slots, false, 0.0, rng, t);
  for (int k = 0; k < 3; ++k) {
    CHECK(t.logits[5 + 3] == doctest::Approx(t.logits[static_cast<std::size_t>(5 + 3 + k * 0)]));
  }
  for (int block = 1; block < 3; ++block)
    for (int k = 0; k < 3; ++k)
      CHECK(t.logits[static_cast<std::size_t>(5 + k)] ==
            doctest::Approx(t.logits[static_cast<std::size_t>(5 + 3 * block + k)]).epsilon(1e-15));
}

TEST_CASE("slot permutation permutes slot logit blocks and fixes the general block") {
  GnnWeights w;
  RngStream rng(37);
  w.init(rng);
  const int n = 6;
  std::vector<std::vector<double>> feats(n, std::vector<double>(8));
  for (auto& f : feats)
    for (double& v : f) v = rng.next_bernoulli(0.4) ? 1.0 : 0.0;
  std::vector<double> indep(21);
  for (double& v : indep) v = rng.next_bernoulli(0.3) ? 1.0 : 0.0;

  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> perm(n);
    for (int i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
    for (std::size_t i = n; i > 1; --i)
      std::swap(perm[i - 1], perm[rng.next_below(i)]);

    std::vector<const double*> base(static_cast<std::size_t>(n)), permuted(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      base[static_cast<std::size_t>(i)] = feats[static_cast<std::size_t>(i)].data();
      permuted[static_cast<std::size_t>(i)] = feats[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])].data();
    }
    GnnTrace ta, tb;
    gnn_forward(w, indep.data(), base, false, 0.0, rng, ta);
    gnn_forward(w, indep.data(), permuted, false, 0.0, rng, tb);

    for (int k = 0; k < 5; ++k)
      CHECK(std::abs(ta.logits[static_cast<std::size_t>(k)] - tb.logits[static_cast<std::size_t>(k)]) <= 1e-9);
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < 3; ++k) {
        double got = tb.logits[static_cast<std::size_t>(5 + 3 * i + k)];
        double want = ta.logits[static_cast<std::size_t>(5 + 3 * perm[static_cast<std::size_t>(i)] + k)];
        CHECK(std::abs(got - want) <= 1e-9);
      }
  }
}

TEST_CASE("parameter counts: shared-GNN constant, per-domain linear, flat linear in slots") {
  const Ontology& ont4 = test::default_ontology();
  Ontology ont2 = test::tiny_ontology();
  RngStream rng(1);

  Policy uhgnn4 = make_policy(PolicyKind::kUhgnn, ont4, rng);
  Policy uhgnn2 = make_policy(PolicyKind::kUhgnn, ont2, rng);
  CHECK(uhgnn4.param_count() == uhgnn2.param_count());

  Policy hgnn4 = make_policy(PolicyKind::kHgnn, ont4, rng);
  Policy hgnn2 = make_policy(PolicyKind::kHgnn, ont2, rng);
  CHECK(hgnn4.param_count() == 4 * uhgnn4.param_count());
  CHECK(hgnn2.param_count() == 2 * uhgnn4.param_count());

  auto fnn_expected = [](int total_slots) {
    long in = 21 + 8 * static_cast<long>(total_slots);
    long out = 5 + 3 * static_cast<long>(total_slots);
    return (in * 128 + 128) + (128L * 128 + 128) + (128 * out + out);
  };
  Policy fnn4 = make_policy(PolicyKind::kFnn, ont4, rng);
  Policy fnn2 = make_policy(PolicyKind::kFnn, ont2, rng);
  CHECK(fnn4.param_count() == fnn_expected(ont4.total_slots()));
  CHECK(fnn2.param_count() == fnn_expected(ont2.total_slots()));
  CHECK(fnn4.param_count() > uhgnn4.param_count());

  Policy hfnn4 = make_policy(PolicyKind::kHfnn, ont4, rng);
  CHECK(hfnn4.model_count() == 4);
}

TEST_CASE("all four kinds pass end-to-end finite-difference checks") {
  Ontology ont = test::tiny_ontology();
  RngStream rng(2024);
  for (PolicyKind kind :
       {PolicyKind::kFnn, PolicyKind::kHfnn, PolicyKind::kHgnn, PolicyKind::kUhgnn}) {
    CAPTURE(to_string(kind));
    for (int instance = 0; instance < 20; ++instance) {
      Policy p = make_policy(kind, ont, rng, /*hidden_gnn=*/6, /*hidden_mlp=*/10);
      nn::AdamConfig adam;
      PolicyTrainer tr(p, 0.0, adam, 0);
      Sample s = random_sample(p, ont, rng);
      std::vector<Vec> grads = analytic_grads(p, tr, s);
      std::vector<nn::ParamRef> params = detail::model_params(p, tr, p.model_index(s.domain_index));

      double worst = 0.0;
      for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Vec& value = *params[pi].value;
        for (std::size_t k = 0; k < value.size(); ++k) {
          double orig = value[k];
          const double h = 1e-5;
          value[k] = orig + h;
          double up = sample_loss(p, s, tr.traces);
          value[k] = orig - h;
          double down = sample_loss(p, s, tr.traces);
          value[k] = orig;
          double numeric = (up - down) / (2 * h);
          worst = std::max(worst, rel_err(grads[pi][k], numeric));
        }
      }
      CHECK(worst <= 1e-4);
    }
  }
}

TEST_CASE("flat net with zero input follows the bias path") {
  Ontology ont = test::tiny_ontology();
  RngStream rng(3);
  Policy p = make_policy(PolicyKind::kFnn, ont, rng);
  MlpParams& m = p.mlps[0];
  RngStream brng(4);
  for (double& b : m.l1.bias) b = brng.next_uniform(-1, 1);
  for (double& b : m.l2.bias) b = brng.next_uniform(-1, 1);
  for (double& b : m.l3.bias) b = brng.next_uniform(-1, 1);

  Sample s;
  s.domain_index = 0;
  s.n_slots = 0;
  s.features.assign(static_cast<std::size_t>(p.global.feature_dim()), 0.0);
  s.mask.assign(static_cast<std::size_t>(p.global.action_dim()), 1);
  s.target = 0;

  PolicyTraces traces;
  RngStream zero(0);
  const Vec& logits = policy_logits(p, s, false, 0.0, zero, traces);

  // Manual composition through the three layers.
  Vec h1 = m.l1.bias;
  nn::relu_inplace(h1.data(), static_cast<int>(h1.size()));
  Vec h2, expect;
  m.l2.forward(h1, h2);
  nn::relu_inplace(h2.data(), static_cast<int>(h2.size()));
  m.l3.forward(h2, expect);
  REQUIRE(logits.size() == expect.size());
  for (std::size_t i = 0; i < expect.size(); ++i)
    CHECK(logits[i] == doctest::Approx(expect[i]).epsilon(1e-12));
}

TEST_CASE("untrained policies act within the valid mask and decode greedily") {
  const Ontology& ont = test::default_ontology();
  const Database& db = test::default_db();
  RngStream rng(55);
  for (PolicyKind kind :
       {PolicyKind::kFnn, PolicyKind::kHfnn, PolicyKind::kHgnn, PolicyKind::kUhgnn}) {
    Policy p = make_policy(kind, ont, rng);
    DialogueState state = init_state(ont, db);
    apply_user_acts(state, {UserAct{UserIntent::kInform, "hotel", "area", "west"}}, ont, db);
    SystemAct act = policy_act(p, state, ont, db);
    ActionCatalog cat = make_catalog(ont, "hotel");
    std::vector<std::uint8_t> mask = valid_mask(state, "hotel", cat, ont);
    if (kind == PolicyKind::kFnn) {
      // decoded act must belong to the active domain and be valid there
      CHECK((act.domain == "hotel" || act.intent == SysIntent::kBye));
    }
    if (act.domain == "hotel" || act.intent == SysIntent::kBye)
      CHECK(mask[static_cast<std::size_t>(act_index(act, cat))] == 1);
    // greedy decode is stable across repeated calls
    CHECK(policy_act(p, state, ont, db) == act);
    CHECK(policy_act(p, state, ont, db) == act);
  }
}

TEST_CASE("shared-weight policy treats twin domains identically") {
  Ontology twins = load_ontology_text(R"([
    {"name": "alpha", "slots": [
      {"name": "a1", "informable": true, "requestable": true, "needed_for_find": true,
       "needed_for_book": false, "values": ["x", "y"]},
      {"name": "a2", "informable": true, "requestable": true, "needed_for_find": false,
       "needed_for_book": false, "values": ["p", "q"]}
    ]},
    {"name": "beta", "slots": [
      {"name": "b1", "informable": true, "requestable": true, "needed_for_find": true,
       "needed_for_book": false, "values": ["u", "v"]},
      {"name": "b2", "informable": true, "requestable": true, "needed_for_find": false,
       "needed_for_book": false, "values": ["m", "n"]}
    ]}
  ])");
  Database db = generate_database(twins, 5, 10);
  RngStream rng(66);
  Policy p = make_policy(PolicyKind::kUhgnn, twins, rng);

  DialogueState sa = init_state(twins, db);
  apply_user_acts(sa, {UserAct{UserIntent::kInform, "alpha", "a1", "x"}}, twins, db);
  DialogueState sb = init_state(twins, db);
  apply_user_acts(sb, {UserAct{UserIntent::kInform, "beta", "b1", "x"}}, twins, db);
  // Align the database view so the tracked states are feature-identical.
  sb.domain("beta").db_count = sa.domain("alpha").db_count;

  SystemAct aa = policy_act(p, sa, twins, db);
  SystemAct ab = policy_act(p, sb, twins, db);
  CHECK(aa.intent == ab.intent);
  CHECK(twins.domain("alpha").slot_index(aa.slot) == twins.domain("beta").slot_index(ab.slot));
}

TEST_CASE("training overfits a single example") {
  Ontology ont = test::tiny_ontology();
  RngStream rng(77);
  Policy p = make_policy(PolicyKind::kUhgnn, ont, rng);
  Sample s = random_sample(p, ont, rng);
  nn::AdamConfig adam;
  PolicyTrainer tr(p, /*dropout=*/0.0, adam, 123);
  const Sample* batch[1] = {&s};

  std::vector<double> losses;
  for (int step = 0; step < 500; ++step)
    losses.push_back(train_step(tr, std::span<const Sample* const>(batch, 1)));
  for (std::size_t k = 10; k + 1 < losses.size(); ++k)
    CHECK(losses[k + 1] <= losses[k] + 1e-9);
  CHECK(losses.back() < 0.01);
}

TEST_CASE("a batch of one example repeated 64 times moves like the single example") {
  Ontology ont = test::tiny_ontology();
  RngStream rng(88);
  Policy p1 = make_policy(PolicyKind::kHgnn, ont, rng);
  Policy p2 = p1;
  Sample s = random_sample(p1, ont, rng);
  nn::AdamConfig adam;
  PolicyTrainer t1(p1, 0.0, adam, 5);
  PolicyTrainer t2(p2, 0.0, adam, 5);

  const Sample* single[1] = {&s};
  std::vector<const Sample*> repeated(64, &s);
  double l1 = train_step(t1, std::span<const Sample* const>(single, 1));
  double l2 = train_step(t2, std::span<const Sample* const>(repeated.data(), 64));
  CHECK(l1 == doctest::Approx(l2).epsilon(1e-12));
  for (std::size_t m = 0; m < p1.gnns.size(); ++m) {
    REQUIRE(p1.gnns[m].msg_s2s.weight.w.size() == p2.gnns[m].msg_s2s.weight.w.size());
    for (std::size_t i = 0; i < p1.gnns[m].msg_s2s.weight.w.size(); ++i)
      CHECK(p1.gnns[m].msg_s2s.weight.w[i] ==
            doctest::Approx(p2.gnns[m].msg_s2s.weight.w[i]).epsilon(1e-12));
  }
}

TEST_CASE("checkpoints round-trip bit-identically and validate their bindings") {
  const Ontology& ont = test::default_ontology();
  RngStream rng(99);
  for (PolicyKind kind : {PolicyKind::kFnn, PolicyKind::kUhgnn}) {
    Policy p = make_policy(kind, ont, rng);
    Json doc = policy_to_json(p, nullptr, 42);
    std::string first = doc.dump();
    Policy q = policy_from_json(doc, ont);
    std::string second = policy_to_json(q, nullptr, 42).dump();
    CHECK(first == second);
    CHECK(q.kind == p.kind);
    CHECK(q.param_count() == p.param_count());

    Json bad_layout = doc;
    bad_layout["layout"] = "dip-v999";
    CHECK_THROWS_WITH_AS(policy_from_json(bad_layout, ont), doctest::Contains("layout"),
                         std::runtime_error);

    Ontology other = test::tiny_ontology();
    CHECK_THROWS_WITH_AS(policy_from_json(doc, other), doctest::Contains("ontology"),
                         std::runtime_error);
  }

  // Adam state rides along.
  Policy p = make_policy(PolicyKind::kUhgnn, ont, rng);
  nn::AdamConfig adam;
  PolicyTrainer tr(p, 0.0, adam, 7);
  Sample s = random_sample(p, ont, rng);
  const Sample* batch[1] = {&s};
  train_step(tr, std::span<const Sample* const>(batch, 1));
  Json doc = policy_to_json(p, &tr.adam, 1);
  std::vector<nn::AdamState> restored;
  Policy q = policy_from_json(doc, ont, &restored);
  REQUIRE(restored.size() == tr.adam.size());
  CHECK(restored[0].step == 1);
  CHECK(restored[0].m == tr.adam[0].m);
}
