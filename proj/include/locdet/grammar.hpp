#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "locdet/ops.hpp"
#include "locdet/raster.hpp"
#include "locdet/rng.hpp"

namespace locdet {

// Elliptical structuring-element parameters as sampled; rasterized on demand.
struct SeParams {
  double orientation = 0.0;
  int major_radius = 1;
  double aspect_ratio = 1.0;
  bool operator==(const SeParams&) const = default;
};

// One operator application per node. Leaf programs consist of the bare image
// variable; interior nodes reference earlier nodes by index.
struct VarOp {
  bool operator==(const VarOp&) const = default;
};
struct BinaryOp {
  BinaryOpKind kind;
  bool operator==(const BinaryOp&) const = default;
};
struct SigmoidOp {
  double theta, lambda;
  bool operator==(const SigmoidOp&) const = default;
};
struct GgmOp {
  double sigma;
  bool operator==(const GgmOp&) const = default;
};
struct LaplaceOp {
  double sigma;
  bool operator==(const LaplaceOp&) const = default;
};
struct LawsOp {
  LawsVector u, v;
  bool operator==(const LawsOp&) const = default;
};
struct GaborOp {
  double orientation, size, ratio, wavelength;
  GaborEnvelope envelope;
  bool operator==(const GaborOp&) const = default;
};
struct MorphOp {
  MorphKind kind;
  SeParams se;
  bool operator==(const MorphOp&) const = default;
};
struct PtileOp {
  double p;
  SeParams se;
  bool operator==(const PtileOp&) const = default;
};
struct ConvolveOp {
  ViolaJonesKernel kernel;
  bool operator==(const ConvolveOp&) const = default;
};

using OpSpec = std::variant<VarOp, BinaryOp, SigmoidOp, GgmOp, LaplaceOp, LawsOp, GaborOp,
                            MorphOp, PtileOp, ConvolveOp>;

struct ProgramNode {
  OpSpec op;
  std::vector<int> inputs;  // indices of earlier nodes
  bool operator==(const ProgramNode&) const = default;
};

// Feature-extraction program as an operator DAG: node inputs always point to
// earlier indices, the unique VarOp leaf is shared by every path, and `root`
// names the output node.
struct FeatureProgram {
  std::vector<ProgramNode> nodes;
  int root = 0;
  bool operator==(const FeatureProgram&) const = default;
};

enum class GrammarVariant { Full, HaarOnly, NoMorphology, NoHaar };

std::string variant_name(GrammarVariant v);          // full|haar|no-morph|no-haar
GrammarVariant variant_from_name(const std::string& name);

// The production table. Rule tags name right-hand-side alternatives; the
// sampler interprets them. Keeping the table as data lets the structural
// invariants (defined nonterminals, per-variant exclusions) be checked
// directly rather than buried in sampling control flow.
enum class Nonterminal { Feature, Binary, NLBinary, Unary, Compound, Morph, NLUnary, LUnary };

enum class RuleTag {
  BinaryOfUnaryUnary,    // Binary(Unary(X), Unary(X))
  NLUnaryOfUnary,        // NLUnary(Unary(X))
  NLBinaryOfUnaryUnary,  // NLBinary(Unary(X), Unary(X))
  CompoundOfX,           // Compound(X)
  OpMult,
  OpNormDiff,
  OpScaledSub,
  OpBlend,
  UnaryLUnary,       // Unary -> LUnary
  UnaryNLUnary,      // Unary -> NLUnary
  CompoundUnary,     // Compound -> Unary(X)
  CompoundBinaryRec, // Compound -> Binary(X, Compound(X))
  OpErode,
  OpDilate,
  OpOpen,
  OpClose,
  OpSigmoid,
  MorphOfRandomSE,   // NLUnary -> Morph(X, RandomSE())
  OpPtile,
  OpGgm,
  OpLaws,
  OpLaplace,
  OpGabor,
  OpConvolve,
};

struct Grammar {
  std::map<Nonterminal, std::vector<RuleTag>> productions;
};

Grammar grammar_for(GrammarVariant variant);
// Throws if any rule references an undefined nonterminal.
void validate_grammar(const Grammar& grammar);

struct GrammarConfig {
  GrammarVariant variant = GrammarVariant::Full;
  int max_depth = 8;  // Compound recursion bound; at the bound the Unary rule is forced
};

// Expands Feature(I) with a uniform rule choice per production. Draw order is
// fixed: rule index, then the rule's scalar parameters, then children left to
// right, so a seed fully determines the program. When a rule mentions X twice
// the subtrees are sampled independently but share the single VarOp leaf.
FeatureProgram sample_program(const GrammarConfig& config, Rng& rng);

// Structural and range checks: index ordering, arities, exactly one VarOp,
// reachability from root, parameters inside the sampling ranges, and the
// variant's operator exclusions. Throws std::runtime_error on violation.
void validate_program(const FeatureProgram& prog, GrammarVariant variant);

struct ProgramStats {
  std::vector<int64_t> invocations;  // per node, counts operator applications
};

// Evaluates reachable nodes once each in index order. Operator failures are
// rethrown with the offending node index and operator name attached.
GreyImage evaluate(const FeatureProgram& prog, const GreyImage& image,
                   ProgramStats* stats = nullptr);

// Single-line s-expression text with datum labels (#0=(...) / #0#) marking
// shared interior nodes; the image variable is spelled I. parse(serialize(p))
// reproduces nodes and indices exactly for canonically ordered programs.
std::string serialize_program(const FeatureProgram& prog);
FeatureProgram parse_program(const std::string& text);

}  // namespace locdet
