#include <doctest.h>

#include <thread>

#include "extraction_lab/oracle.hpp"

using namespace extraction_lab;

namespace {

Network small_teacher(std::uint64_t seed = 1) {
  Random rng(seed);
  return xavier_init<double>(NetworkSpec{3, {6}, 4}, rng);
}

Eigen::VectorXd random_sample(Random& rng, int d = 3) {
  Eigen::VectorXd x(d);
  for (int i = 0; i < d; ++i) x[i] = rng.normal();
  return x;
}

}  // namespace

TEST_CASE("budget of one") {
  LocalOracle oracle(small_teacher(), LabelMode::soft, 1);
  CHECK(oracle.budget_status() == BudgetStatus{0, 1});
  const Eigen::Vector3d x(0.1, 0.2, 0.3);
  CHECK_NOTHROW(oracle.query(x));
  CHECK(oracle.budget_status() == BudgetStatus{1, 1});
  CHECK_THROWS_AS(oracle.query(x), BudgetExhausted);
  CHECK(oracle.budget_status() == BudgetStatus{1, 1});
}

TEST_CASE("repeated identical samples still cost a call") {
  LocalOracle oracle(small_teacher(), LabelMode::hard, 5);
  const Eigen::Vector3d x(1, 1, 1);
  for (int i = 0; i < 3; ++i) oracle.query(x);
  CHECK(oracle.budget_status().used == 3);
}

TEST_CASE("dimension mismatch leaves the budget untouched") {
  LocalOracle oracle(small_teacher(), LabelMode::soft, 3);
  CHECK_THROWS_AS(oracle.query(Eigen::Vector2d(1, 2)), DimensionMismatch);
  CHECK(oracle.budget_status().used == 0);
}

TEST_CASE("soft responses are the teacher softmax, bitwise") {
  const Network teacher = small_teacher(4);
  LocalOracle oracle(teacher, LabelMode::soft, 50);
  Random rng(2);
  for (int i = 0; i < 50; ++i) {
    const auto x = random_sample(rng);
    const auto r = oracle.query(x);
    REQUIRE(r.kind == LabelMode::soft);
    CHECK(r.probs == softmax(forward(teacher, x).logits));
    CHECK(std::abs(r.probs.sum() - 1) < 1e-6);
  }
}

TEST_CASE("hard responses are the argmax") {
  NetworkSpec spec{2, {2}, 3};
  Network net = Network::zeros(spec);
  // identity hidden layer, output picks logits [0.1, 0.9, 0.3] at x = (1, 0)
  net.weights[0] << 1, 0, 0, 1;
  net.weights[1] << 0.1, 0, 0.9, 0, 0.3, 0;
  LocalOracle oracle(net, LabelMode::hard, 2);
  const auto r = oracle.query(Eigen::Vector2d(1, 0));
  CHECK(r.kind == LabelMode::hard);
  CHECK(r.label == 1);
  CHECK(r.as_distribution(3) == Eigen::Vector3d(0, 1, 0));

  SUBCASE("ties go to the lowest index") {
    net.weights[1].setZero();
    LocalOracle tied(net, LabelMode::hard, 1);
    CHECK(tied.query(Eigen::Vector2d(1, 0)).label == 0);
  }
}

TEST_CASE("hard labels are invariant to positive logit scaling") {
  Network teacher = small_teacher(8);
  Network scaled = teacher;
  scaled.weights.back() *= 3.7;
  scaled.biases.back() *= 3.7;
  Random rng(8);
  for (int i = 0; i < 100; ++i) {
    const auto x = random_sample(rng);
    CHECK(teacher_response(teacher, x, LabelMode::hard).label == teacher_response(scaled, x, LabelMode::hard).label);
  }
}

TEST_CASE("diagnostic labels match queries without spending budget") {
  const Network teacher = small_teacher(5);
  for (auto mode : {LabelMode::soft, LabelMode::hard}) {
    LocalOracle oracle(teacher, mode, 20);
    Random rng(3);
    Eigen::MatrixXd xs(20, 3);
    for (int i = 0; i < 20; ++i) xs.row(i) = random_sample(rng).transpose();
    const auto diag = unbudgeted_reference_labels(oracle, xs);
    CHECK(oracle.budget_status().used == 0);
    for (int i = 0; i < 20; ++i) {
      const auto r = oracle.query(xs.row(i).transpose());
      CHECK(r.predicted_class() == diag[static_cast<std::size_t>(i)].predicted_class());
      if (mode == LabelMode::soft) CHECK(r.probs == diag[static_cast<std::size_t>(i)].probs);
    }
  }
}

TEST_CASE("diagnostics are unavailable through wrappers") {
  LocalOracle inner(small_teacher(), LabelMode::soft, 3);
  CountingOracle counting(inner);
  CHECK_THROWS_AS(unbudgeted_reference_labels(counting, Eigen::MatrixXd::Zero(1, 3)), DiagnosticsUnavailable);
}

TEST_CASE("counting wrapper") {
  LocalOracle inner(small_teacher(), LabelMode::soft, 2);
  CountingOracle counting(inner);
  counting.query(Eigen::Vector3d(1, 2, 3));
  counting.query(Eigen::Vector3d(1, 2, 3));
  CHECK_THROWS_AS(counting.query(Eigen::Vector3d(1, 2, 3)), BudgetExhausted);
  CHECK(counting.successes() == 2);
  CHECK(counting.refusals() == 1);
  CHECK(counting.queried().size() == 2);
  CHECK(counting.budget_status() == BudgetStatus{2, 2});
}

TEST_CASE("budget fuzz: random interleavings never over-admit") {
  Random rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const auto limit = static_cast<std::int64_t>(1 + rng.index(30));
    LocalOracle oracle(small_teacher(), rng.index(2) ? LabelMode::soft : LabelMode::hard, limit);
    std::int64_t ok = 0, refused = 0, prev_used = 0;
    const int calls = static_cast<int>(rng.index(60));
    for (int c = 0; c < calls; ++c) {
      try {
        if (rng.index(5) == 0)
          oracle.query(Eigen::Vector2d(0, 0));
        else
          oracle.query(random_sample(rng)), ++ok;
      } catch (const BudgetExhausted&) {
        ++refused;
        CHECK(oracle.budget_status().used == limit);
      } catch (const DimensionMismatch&) {
      }
      const auto st = oracle.budget_status();
      CHECK(st.used <= st.limit);
      CHECK(st.used >= prev_used);
      prev_used = st.used;
    }
    CHECK(oracle.budget_status().used == ok);
    CHECK(ok <= limit);
    CHECK((refused == 0 || ok == limit));
  }
}

TEST_CASE("concurrent callers see exactly the limit") {
  Budget budget(1000);
  std::atomic<int> granted{0};
  std::vector<std::thread> threads;
  for (int t = 0; t < 8; ++t)
    threads.emplace_back([&] {
      for (int i = 0; i < 500; ++i)
        if (budget.try_acquire()) ++granted;
    });
  for (auto& t : threads) t.join();
  CHECK(granted == 1000);
  CHECK(budget.status() == BudgetStatus{1000, 1000});
}

TEST_CASE("label mode names") {
  CHECK(label_mode_from_string("soft") == LabelMode::soft);
  CHECK(label_mode_from_string(to_string(LabelMode::hard)) == LabelMode::hard);
  CHECK_THROWS_AS(label_mode_from_string("fuzzy"), std::invalid_argument);
  CHECK_THROWS(Budget(0));
}
