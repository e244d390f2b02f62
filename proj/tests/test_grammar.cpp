#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <string>

#include "locdet/grammar.hpp"
#include "locdet/raster.hpp"
#include "locdet/rng.hpp"

using namespace locdet;

namespace {

FeatureProgram identity_program() {
  FeatureProgram p;
  p.nodes.push_back({VarOp{}, {}});
  p.root = 0;
  return p;
}

bool contains_op(const FeatureProgram& p, auto pred) {
  for (const auto& node : p.nodes)
    if (pred(node.op)) return true;
  return false;
}

}  // namespace

TEST_CASE("production table matches the published grammar") {
  Grammar full = grammar_for(GrammarVariant::Full);
  validate_grammar(full);
  CHECK(full.productions.size() == 8);
  CHECK(full.productions.at(Nonterminal::Feature).size() == 4);
  CHECK(full.productions.at(Nonterminal::Binary).size() == 4);
  CHECK(full.productions.at(Nonterminal::NLBinary).size() == 2);
  CHECK(full.productions.at(Nonterminal::Unary).size() == 2);
  CHECK(full.productions.at(Nonterminal::Compound).size() == 2);
  CHECK(full.productions.at(Nonterminal::Morph).size() == 4);
  CHECK(full.productions.at(Nonterminal::NLUnary).size() == 4);
  CHECK(full.productions.at(Nonterminal::LUnary).size() == 4);

  validate_grammar(grammar_for(GrammarVariant::HaarOnly));
  validate_grammar(grammar_for(GrammarVariant::NoMorphology));
  validate_grammar(grammar_for(GrammarVariant::NoHaar));

  Grammar broken = full;
  broken.productions.erase(Nonterminal::Morph);
  CHECK_THROWS(validate_grammar(broken));
  Grammar empty_rule = full;
  empty_rule.productions[Nonterminal::LUnary].clear();
  CHECK_THROWS(validate_grammar(empty_rule));
}

TEST_CASE("sampling is deterministic in the seed") {
  for (GrammarVariant v : {GrammarVariant::Full, GrammarVariant::HaarOnly,
                           GrammarVariant::NoMorphology, GrammarVariant::NoHaar}) {
    GrammarConfig cfg;
    cfg.variant = v;
    Rng a(99), b(99);
    for (int i = 0; i < 50; ++i) {
      FeatureProgram pa = sample_program(cfg, a);
      FeatureProgram pb = sample_program(cfg, b);
      CHECK(pa == pb);
    }
    Rng c(100);
    bool any_difference = false;
    Rng a2(99);
    for (int i = 0; i < 50; ++i)
      if (!(sample_program(cfg, a2) == sample_program(cfg, c))) any_difference = true;
    if (v != GrammarVariant::HaarOnly) CHECK(any_difference);
  }
}

TEST_CASE("sampled programs satisfy the invariants") {
  GrammarConfig cfg;
  Rng rng(7);
  for (int i = 0; i < 10000; ++i) {
    FeatureProgram p = sample_program(cfg, rng);
    CHECK_NOTHROW(validate_program(p, GrammarVariant::Full));
    CHECK(p.nodes.size() <= 12);  // 8 recursion levels plus a unary chain and the leaf
  }
}

TEST_CASE("variant exclusions hold over many samples") {
  Rng rng(13);
  for (GrammarVariant v : {GrammarVariant::HaarOnly, GrammarVariant::NoMorphology,
                           GrammarVariant::NoHaar}) {
    GrammarConfig cfg;
    cfg.variant = v;
    for (int i = 0; i < 10000; ++i) {
      FeatureProgram p = sample_program(cfg, rng);
      CHECK_NOTHROW(validate_program(p, v));
      if (v == GrammarVariant::HaarOnly) {
        CHECK(p.nodes.size() == 2);
        CHECK(std::holds_alternative<ConvolveOp>(p.nodes[1].op));
      }
      if (v == GrammarVariant::NoMorphology)
        CHECK_FALSE(contains_op(p, [](const OpSpec& op) {
          return std::holds_alternative<MorphOp>(op) || std::holds_alternative<PtileOp>(op);
        }));
      if (v == GrammarVariant::NoHaar)
        CHECK_FALSE(contains_op(
            p, [](const OpSpec& op) { return std::holds_alternative<ConvolveOp>(op); }));
    }
  }
}

TEST_CASE("the published example derivation is producible") {
  // normDiff(I, erode(I, se)): first via the parser, then from the sampler.
  FeatureProgram hand =
      parse_program("(normDiff I (erode I (se 1.5707963267948966 7 0.3)))");
  CHECK_NOTHROW(validate_program(hand, GrammarVariant::Full));
  CHECK(hand.nodes.size() == 3);

  auto matches = [](const FeatureProgram& p) {
    if (p.root < 0 || p.nodes.empty()) return false;
    const ProgramNode& root = p.nodes[p.root];
    const auto* bin = std::get_if<BinaryOp>(&root.op);
    if (!bin || bin->kind != BinaryOpKind::NormDiff) return false;
    if (!std::holds_alternative<VarOp>(p.nodes[root.inputs[0]].op)) return false;
    const ProgramNode& right = p.nodes[root.inputs[1]];
    const auto* morph = std::get_if<MorphOp>(&right.op);
    return morph && morph->kind == MorphKind::Erode &&
           std::holds_alternative<VarOp>(p.nodes[right.inputs[0]].op);
  };
  GrammarConfig cfg;
  Rng rng(2024);
  bool found = false;
  for (int i = 0; i < 100000 && !found; ++i) found = matches(sample_program(cfg, rng));
  CHECK(found);
}

TEST_CASE("max depth truncates compound recursion") {
  GrammarConfig shallow;
  shallow.max_depth = 1;
  Rng rng(17);
  for (int i = 0; i < 2000; ++i) {
    FeatureProgram p = sample_program(shallow, rng);
    // One level of Compound yields at most leaf + two unaries + one binary.
    CHECK(p.nodes.size() <= 4);
  }
  GrammarConfig bad;
  bad.max_depth = 0;
  CHECK_THROWS(sample_program(bad, rng));
}

TEST_CASE("evaluate computes the identity program") {
  Rng rng(23);
  GreyImage img(9, 6);
  for (double& v : img.data()) v = rng.uniform01();
  GreyImage out = evaluate(identity_program(), img);
  CHECK(out == img);
}

TEST_CASE("shared nodes are evaluated once") {
  FeatureProgram p;
  p.nodes.push_back({VarOp{}, {}});
  p.nodes.push_back({SigmoidOp{0.25, 0.1}, {0}});
  p.nodes.push_back({BinaryOp{BinaryOpKind::Mult}, {1, 1}});
  p.root = 2;
  CHECK_NOTHROW(validate_program(p, GrammarVariant::Full));

  GreyImage img(5, 5, 0.3);
  ProgramStats stats;
  GreyImage out = evaluate(p, img, &stats);
  CHECK(stats.invocations.size() == 3);
  CHECK(stats.invocations[1] == 1);

  double u = std::atan(0.1 * (0.3 + 0.25)) / 0.1;
  CHECK(out(2, 2) == doctest::Approx(u * u));
}

TEST_CASE("the example program is constant-free on constant input") {
  FeatureProgram p = parse_program("(normDiff I (erode I (se 0.5 4 2.0)))");
  GreyImage img(16, 16, 0.42);
  GreyImage out = evaluate(p, img);
  for (double v : out.data()) CHECK(v == 0.0);
}

TEST_CASE("evaluation errors carry the node index") {
  FeatureProgram p = identity_program();
  p.root = 5;
  CHECK_THROWS(evaluate(p, GreyImage(4, 4)));

  // An out-of-range percentile only fails at evaluation time when forced in.
  FeatureProgram bad;
  bad.nodes.push_back({VarOp{}, {}});
  bad.nodes.push_back({PtileOp{150.0, SeParams{0.0, 2, 1.0}}, {0}});
  bad.root = 1;
  try {
    evaluate(bad, GreyImage(4, 4));
    CHECK(false);
  } catch (const std::exception& e) {
    std::string msg = e.what();
    CHECK(msg.find("node 1") != std::string::npos);
    CHECK(msg.find("ptile") != std::string::npos);
  }
}

TEST_CASE("validator rejects malformed programs") {
  FeatureProgram p = identity_program();
  CHECK_NOTHROW(validate_program(p, GrammarVariant::Full));

  FeatureProgram empty;
  CHECK_THROWS(validate_program(empty, GrammarVariant::Full));

  FeatureProgram bad_root = identity_program();
  bad_root.root = 3;
  CHECK_THROWS(validate_program(bad_root, GrammarVariant::Full));

  FeatureProgram forward;
  forward.nodes.push_back({VarOp{}, {}});
  forward.nodes.push_back({SigmoidOp{0.0, 0.1}, {2}});  // references a later node
  forward.nodes.push_back({SigmoidOp{0.0, 0.1}, {0}});
  forward.root = 2;
  CHECK_THROWS(validate_program(forward, GrammarVariant::Full));

  FeatureProgram two_vars;
  two_vars.nodes.push_back({VarOp{}, {}});
  two_vars.nodes.push_back({VarOp{}, {}});
  two_vars.nodes.push_back({BinaryOp{BinaryOpKind::Mult}, {0, 1}});
  two_vars.root = 2;
  CHECK_THROWS(validate_program(two_vars, GrammarVariant::Full));

  FeatureProgram unreachable;
  unreachable.nodes.push_back({VarOp{}, {}});
  unreachable.nodes.push_back({SigmoidOp{0.0, 0.1}, {0}});
  unreachable.nodes.push_back({GgmOp{1.0}, {0}});
  unreachable.root = 1;
  CHECK_THROWS(validate_program(unreachable, GrammarVariant::Full));

  FeatureProgram bad_lambda;
  bad_lambda.nodes.push_back({VarOp{}, {}});
  bad_lambda.nodes.push_back({SigmoidOp{0.0, 0.5}, {0}});
  bad_lambda.root = 1;
  CHECK_THROWS(validate_program(bad_lambda, GrammarVariant::Full));

  FeatureProgram bad_sigma;
  bad_sigma.nodes.push_back({VarOp{}, {}});
  bad_sigma.nodes.push_back({GgmOp{25.0}, {0}});
  bad_sigma.root = 1;
  CHECK_THROWS(validate_program(bad_sigma, GrammarVariant::Full));

  FeatureProgram wrong_variant;
  wrong_variant.nodes.push_back({VarOp{}, {}});
  wrong_variant.nodes.push_back({MorphOp{MorphKind::Erode, SeParams{0.0, 2, 1.0}}, {0}});
  wrong_variant.root = 1;
  CHECK_NOTHROW(validate_program(wrong_variant, GrammarVariant::Full));
  CHECK_THROWS(validate_program(wrong_variant, GrammarVariant::NoMorphology));
  CHECK_THROWS(validate_program(wrong_variant, GrammarVariant::HaarOnly));
}

TEST_CASE("serialization round-trips fuzzed programs") {
  Rng rng(31);
  GrammarConfig cfg;
  for (int i = 0; i < 1000; ++i) {
    FeatureProgram p = sample_program(cfg, rng);
    std::string text = serialize_program(p);
    FeatureProgram back = parse_program(text);
    CHECK(back == p);
  }
}

TEST_CASE("serialized programs re-evaluate identically") {
  Rng rng(37);
  GrammarConfig cfg;
  GreyImage img(24, 18);
  for (double& v : img.data()) v = rng.uniform01();
  for (int i = 0; i < 25; ++i) {
    FeatureProgram p = sample_program(cfg, rng);
    FeatureProgram back = parse_program(serialize_program(p));
    CHECK(evaluate(back, img) == evaluate(p, img));
  }
}

TEST_CASE("shared interior nodes use datum labels") {
  FeatureProgram p;
  p.nodes.push_back({VarOp{}, {}});
  p.nodes.push_back({GgmOp{1.5}, {0}});
  p.nodes.push_back({BinaryOp{BinaryOpKind::Blend}, {1, 1}});
  p.root = 2;
  std::string text = serialize_program(p);
  CHECK(text.find("#0=") != std::string::npos);
  CHECK(text.find("#0#") != std::string::npos);
  FeatureProgram back = parse_program(text);
  CHECK(back == p);

  ProgramStats stats;
  evaluate(back, GreyImage(8, 8, 0.5), &stats);
  CHECK(stats.invocations[1] == 1);
}

TEST_CASE("parse errors name the position") {
  for (const char* bad : {"erode(I", "(erode I", "(mult I)", "(sigmoid I 0.1)",
                          "(laws I L5 Q5)", "(mult I I) extra", "#1#", "(se 0 2 1)"}) {
    try {
      parse_program(bad);
      CHECK_MESSAGE(false, "expected parse failure for: ", bad);
    } catch (const std::exception& e) {
      std::string msg = e.what();
      CHECK(msg.find("line") != std::string::npos);
      CHECK(msg.find("col") != std::string::npos);
    }
  }
}
