#include "locdet/grammar.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <sstream>
#include <stdexcept>

#include "locdet/textio.hpp"

namespace locdet {

namespace {

const char* binary_name(BinaryOpKind kind) {
  switch (kind) {
    case BinaryOpKind::Mult: return "mult";
    case BinaryOpKind::Blend: return "blend";
    case BinaryOpKind::NormDiff: return "normDiff";
    case BinaryOpKind::ScaledSub: return "scaledSub";
  }
  return "?";
}

const char* morph_name(MorphKind kind) {
  switch (kind) {
    case MorphKind::Erode: return "erode";
    case MorphKind::Dilate: return "dilate";
    case MorphKind::Open: return "open";
    case MorphKind::Close: return "close";
  }
  return "?";
}

const char* laws_name(LawsVector v) {
  switch (v) {
    case LawsVector::L5: return "L5";
    case LawsVector::E5: return "E5";
    case LawsVector::S5: return "S5";
    case LawsVector::R5: return "R5";
    case LawsVector::W5: return "W5";
  }
  return "?";
}

const char* envelope_name(GaborEnvelope e) {
  switch (e) {
    case GaborEnvelope::Sin: return "sin";
    case GaborEnvelope::Cos: return "cos";
    case GaborEnvelope::Both: return "both";
  }
  return "?";
}

const char* vj_kind_name(ViolaJonesKernel::Kind k) {
  switch (k) {
    case ViolaJonesKernel::Kind::Horizontal2: return "h2";
    case ViolaJonesKernel::Kind::Vertical2: return "v2";
    case ViolaJonesKernel::Kind::Horizontal3: return "h3";
    case ViolaJonesKernel::Kind::Vertical3: return "v3";
    case ViolaJonesKernel::Kind::Quad: return "quad";
  }
  return "?";
}

std::string op_name(const OpSpec& op) {
  return std::visit(
      [](const auto& o) -> std::string {
        using O = std::decay_t<decltype(o)>;
        if constexpr (std::is_same_v<O, VarOp>) return "I";
        else if constexpr (std::is_same_v<O, BinaryOp>) return binary_name(o.kind);
        else if constexpr (std::is_same_v<O, SigmoidOp>) return "sigmoid";
        else if constexpr (std::is_same_v<O, GgmOp>) return "ggm";
        else if constexpr (std::is_same_v<O, LaplaceOp>) return "laplace";
        else if constexpr (std::is_same_v<O, LawsOp>) return "laws";
        else if constexpr (std::is_same_v<O, GaborOp>) return "gabor";
        else if constexpr (std::is_same_v<O, MorphOp>) return morph_name(o.kind);
        else if constexpr (std::is_same_v<O, PtileOp>) return "ptile";
        else return "convolve";
      },
      op);
}

size_t op_arity(const OpSpec& op) {
  if (std::holds_alternative<VarOp>(op)) return 0;
  if (std::holds_alternative<BinaryOp>(op)) return 2;
  return 1;
}

std::vector<Nonterminal> tag_references(RuleTag tag) {
  switch (tag) {
    case RuleTag::BinaryOfUnaryUnary: return {Nonterminal::Binary, Nonterminal::Unary};
    case RuleTag::NLUnaryOfUnary: return {Nonterminal::NLUnary, Nonterminal::Unary};
    case RuleTag::NLBinaryOfUnaryUnary: return {Nonterminal::NLBinary, Nonterminal::Unary};
    case RuleTag::CompoundOfX: return {Nonterminal::Compound};
    case RuleTag::UnaryLUnary: return {Nonterminal::LUnary};
    case RuleTag::UnaryNLUnary: return {Nonterminal::NLUnary};
    case RuleTag::CompoundUnary: return {Nonterminal::Unary};
    case RuleTag::CompoundBinaryRec: return {Nonterminal::Binary, Nonterminal::Compound};
    case RuleTag::MorphOfRandomSE: return {Nonterminal::Morph};
    default: return {};
  }
}

}  // namespace

std::string variant_name(GrammarVariant v) {
  switch (v) {
    case GrammarVariant::Full: return "full";
    case GrammarVariant::HaarOnly: return "haar";
    case GrammarVariant::NoMorphology: return "no-morph";
    case GrammarVariant::NoHaar: return "no-haar";
  }
  return "?";
}

GrammarVariant variant_from_name(const std::string& name) {
  if (name == "full") return GrammarVariant::Full;
  if (name == "haar") return GrammarVariant::HaarOnly;
  if (name == "no-morph") return GrammarVariant::NoMorphology;
  if (name == "no-haar") return GrammarVariant::NoHaar;
  throw std::runtime_error("unknown feature-set variant '" + name + "'");
}

Grammar grammar_for(GrammarVariant variant) {
  Grammar g;
  if (variant == GrammarVariant::HaarOnly) {
    g.productions[Nonterminal::Feature] = {RuleTag::OpConvolve};
    return g;
  }
  g.productions[Nonterminal::Feature] = {RuleTag::BinaryOfUnaryUnary, RuleTag::NLUnaryOfUnary,
                                         RuleTag::NLBinaryOfUnaryUnary, RuleTag::CompoundOfX};
  g.productions[Nonterminal::Binary] = {RuleTag::OpMult, RuleTag::OpNormDiff,
                                        RuleTag::OpScaledSub, RuleTag::OpBlend};
  g.productions[Nonterminal::NLBinary] = {RuleTag::OpMult, RuleTag::OpNormDiff};
  g.productions[Nonterminal::Unary] = {RuleTag::UnaryLUnary, RuleTag::UnaryNLUnary};
  g.productions[Nonterminal::Compound] = {RuleTag::CompoundUnary, RuleTag::CompoundBinaryRec};
  g.productions[Nonterminal::Morph] = {RuleTag::OpErode, RuleTag::OpDilate, RuleTag::OpOpen,
                                       RuleTag::OpClose};
  if (variant == GrammarVariant::NoMorphology)
    g.productions[Nonterminal::NLUnary] = {RuleTag::OpSigmoid, RuleTag::OpGgm};
  else
    g.productions[Nonterminal::NLUnary] = {RuleTag::OpSigmoid, RuleTag::MorphOfRandomSE,
                                           RuleTag::OpPtile, RuleTag::OpGgm};
  if (variant == GrammarVariant::NoHaar)
    g.productions[Nonterminal::LUnary] = {RuleTag::OpLaws, RuleTag::OpLaplace, RuleTag::OpGabor};
  else
    g.productions[Nonterminal::LUnary] = {RuleTag::OpLaws, RuleTag::OpLaplace, RuleTag::OpGabor,
                                          RuleTag::OpConvolve};
  return g;
}

void validate_grammar(const Grammar& grammar) {
  for (const auto& [nt, rules] : grammar.productions) {
    if (rules.empty())
      throw std::runtime_error("grammar: empty production");
    for (RuleTag tag : rules)
      for (Nonterminal ref : tag_references(tag))
        if (!grammar.productions.count(ref))
          throw std::runtime_error("grammar: rule references undefined nonterminal");
  }
  if (!grammar.productions.count(Nonterminal::Feature))
    throw std::runtime_error("grammar: missing start symbol Feature");
}

namespace {

// Expands the start symbol into a node list. Node 0 is always the shared
// image variable.
class Sampler {
 public:
  Sampler(const Grammar& grammar, const GrammarConfig& config, Rng& rng)
      : grammar_(grammar), config_(config), rng_(rng) {
    nodes_.push_back({VarOp{}, {}});
  }

  FeatureProgram run() {
    FeatureProgram prog;
    prog.root = expand_feature();
    prog.nodes = std::move(nodes_);
    return prog;
  }

 private:
  RuleTag pick(Nonterminal nt) {
    const auto& alts = grammar_.productions.at(nt);
    if (alts.size() == 1) return alts[0];
    return alts[static_cast<size_t>(rng_.uniform_int(0, static_cast<int64_t>(alts.size()) - 1))];
  }

  int add(OpSpec op, std::vector<int> inputs) {
    nodes_.push_back({std::move(op), std::move(inputs)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  BinaryOpKind pick_binary(Nonterminal nt) {
    switch (pick(nt)) {
      case RuleTag::OpMult: return BinaryOpKind::Mult;
      case RuleTag::OpNormDiff: return BinaryOpKind::NormDiff;
      case RuleTag::OpScaledSub: return BinaryOpKind::ScaledSub;
      case RuleTag::OpBlend: return BinaryOpKind::Blend;
      default: throw std::logic_error("non-operator rule in binary production");
    }
  }

  MorphKind pick_morph() {
    switch (pick(Nonterminal::Morph)) {
      case RuleTag::OpErode: return MorphKind::Erode;
      case RuleTag::OpDilate: return MorphKind::Dilate;
      case RuleTag::OpOpen: return MorphKind::Open;
      case RuleTag::OpClose: return MorphKind::Close;
      default: throw std::logic_error("non-operator rule in Morph production");
    }
  }

  SeParams sample_se() {
    SeParams se;
    se.orientation = rng_.uniform(0.0, 2.0 * M_PI);
    se.major_radius = static_cast<int>(rng_.uniform_int(1, 7));
    se.aspect_ratio = std::pow(10.0, 2.0 * rng_.uniform01() - 1.0);
    return se;
  }

  double sample_sigma() {
    // 3 * |standard normal|, clamped so the Gaussian taps stay practical.
    return std::clamp(3.0 * std::abs(rng_.normal()), 0.3, 9.0);
  }

  int expand_feature() {
    switch (pick(Nonterminal::Feature)) {
      case RuleTag::BinaryOfUnaryUnary: {
        BinaryOpKind kind = pick_binary(Nonterminal::Binary);
        int a = expand_unary();
        int b = expand_unary();
        return add(BinaryOp{kind}, {a, b});
      }
      case RuleTag::NLUnaryOfUnary:
        return expand_nlunary([&] { return expand_unary(); });
      case RuleTag::NLBinaryOfUnaryUnary: {
        BinaryOpKind kind = pick_binary(Nonterminal::NLBinary);
        int a = expand_unary();
        int b = expand_unary();
        return add(BinaryOp{kind}, {a, b});
      }
      case RuleTag::CompoundOfX:
        return expand_compound(1);
      case RuleTag::OpConvolve: {  // the restricted single-operator grammar
        ViolaJonesKernel kernel = sample_vj_kernel(rng_);
        return add(ConvolveOp{kernel}, {0});
      }
      default:
        throw std::logic_error("unexpected rule in Feature production");
    }
  }

  int expand_unary() {
    switch (pick(Nonterminal::Unary)) {
      case RuleTag::UnaryLUnary: return expand_lunary([] { return 0; });
      case RuleTag::UnaryNLUnary: return expand_nlunary([] { return 0; });
      default: throw std::logic_error("unexpected rule in Unary production");
    }
  }

  int expand_compound(int depth) {
    RuleTag tag = depth >= config_.max_depth ? RuleTag::CompoundUnary
                                             : pick(Nonterminal::Compound);
    if (tag == RuleTag::CompoundUnary) return expand_unary();
    BinaryOpKind kind = pick_binary(Nonterminal::Binary);
    int b = expand_compound(depth + 1);
    return add(BinaryOp{kind}, {0, b});  // first operand is the raw image variable
  }

  // The input thunk runs after the rule and its parameters are drawn, keeping
  // the draw order fixed: rule, parameters, then children.
  int expand_nlunary(const std::function<int()>& make_input) {
    switch (pick(Nonterminal::NLUnary)) {
      case RuleTag::OpSigmoid: {
        double theta = rng_.normal();
        double lambda = rng_.uniform_int(0, 1) == 0 ? 0.1 : 0.0;
        int in = make_input();
        return add(SigmoidOp{theta, lambda}, {in});
      }
      case RuleTag::MorphOfRandomSE: {
        MorphKind kind = pick_morph();
        SeParams se = sample_se();
        int in = make_input();
        return add(MorphOp{kind, se}, {in});
      }
      case RuleTag::OpPtile: {
        double p = rng_.uniform(0.0, 100.0);
        SeParams se = sample_se();
        int in = make_input();
        return add(PtileOp{p, se}, {in});
      }
      case RuleTag::OpGgm: {
        double sigma = sample_sigma();
        int in = make_input();
        return add(GgmOp{sigma}, {in});
      }
      default:
        throw std::logic_error("unexpected rule in NLUnary production");
    }
  }

  int expand_lunary(const std::function<int()>& make_input) {
    switch (pick(Nonterminal::LUnary)) {
      case RuleTag::OpLaws: {
        auto u = static_cast<LawsVector>(rng_.uniform_int(0, 4));
        auto v = static_cast<LawsVector>(rng_.uniform_int(0, 4));
        int in = make_input();
        return add(LawsOp{u, v}, {in});
      }
      case RuleTag::OpLaplace: {
        double sigma = sample_sigma();
        int in = make_input();
        return add(LaplaceOp{sigma}, {in});
      }
      case RuleTag::OpGabor: {
        GaborOp op;
        op.orientation = rng_.uniform(0.0, M_PI);
        op.size = rng_.uniform(1.0, 31.0);
        op.ratio = std::pow(10.0, 2.0 * rng_.uniform01() - 1.0);
        op.wavelength = 10.0 * rng_.uniform01() + 2.0;
        op.envelope = static_cast<GaborEnvelope>(rng_.uniform_int(0, 2));
        int in = make_input();
        return add(op, {in});
      }
      case RuleTag::OpConvolve: {
        ViolaJonesKernel kernel = sample_vj_kernel(rng_);
        int in = make_input();
        return add(ConvolveOp{kernel}, {in});
      }
      default:
        throw std::logic_error("unexpected rule in LUnary production");
    }
  }

  const Grammar& grammar_;
  const GrammarConfig& config_;
  Rng& rng_;
  std::vector<ProgramNode> nodes_;
};

}  // namespace

FeatureProgram sample_program(const GrammarConfig& config, Rng& rng) {
  if (config.max_depth < 1) throw std::runtime_error("sample_program: max_depth must be >= 1");
  Grammar grammar = grammar_for(config.variant);
  validate_grammar(grammar);
  return Sampler(grammar, config, rng).run();
}

namespace {

void check(bool ok, int node, const std::string& what) {
  if (!ok)
    throw std::runtime_error("invalid program: node " + std::to_string(node) + ": " + what);
}

void validate_se(const SeParams& se, int node) {
  check(se.major_radius >= 1 && se.major_radius <= 7, node, "SE radius out of range");
  check(se.aspect_ratio >= 0.1 && se.aspect_ratio <= 10.0, node, "SE ratio out of range");
  check(se.orientation >= 0.0 && se.orientation <= 2.0 * M_PI, node,
        "SE orientation out of range");
}

}  // namespace

void validate_program(const FeatureProgram& prog, GrammarVariant variant) {
  const int n = static_cast<int>(prog.nodes.size());
  if (n == 0) throw std::runtime_error("invalid program: empty");
  if (prog.root < 0 || prog.root >= n)
    throw std::runtime_error("invalid program: root index out of range");

  int var_count = 0;
  for (int i = 0; i < n; ++i) {
    const ProgramNode& node = prog.nodes[i];
    check(node.inputs.size() == op_arity(node.op), i, "wrong arity for " + op_name(node.op));
    for (int in : node.inputs) check(in >= 0 && in < i, i, "input does not precede node");
    std::visit(
        [&](const auto& op) {
          using O = std::decay_t<decltype(op)>;
          if constexpr (std::is_same_v<O, VarOp>) {
            ++var_count;
          } else if constexpr (std::is_same_v<O, SigmoidOp>) {
            check(std::isfinite(op.theta), i, "sigmoid theta not finite");
            check(op.lambda == 0.0 || op.lambda == 0.1, i, "sigmoid lambda outside {0, 0.1}");
          } else if constexpr (std::is_same_v<O, GgmOp>) {
            check(op.sigma >= 0.3 && op.sigma <= 9.0, i, "ggm sigma out of range");
          } else if constexpr (std::is_same_v<O, LaplaceOp>) {
            check(op.sigma >= 0.3 && op.sigma <= 9.0, i, "laplace sigma out of range");
          } else if constexpr (std::is_same_v<O, GaborOp>) {
            check(op.orientation >= 0.0 && op.orientation <= M_PI, i,
                  "gabor orientation out of range");
            check(op.size >= 1.0 && op.size <= 31.0, i, "gabor size out of range");
            check(op.ratio >= 0.1 && op.ratio <= 10.0, i, "gabor ratio out of range");
            check(op.wavelength >= 2.0 && op.wavelength <= 12.0, i,
                  "gabor wavelength out of range");
          } else if constexpr (std::is_same_v<O, MorphOp>) {
            validate_se(op.se, i);
          } else if constexpr (std::is_same_v<O, PtileOp>) {
            check(op.p >= 0.0 && op.p <= 100.0, i, "ptile percentile out of range");
            validate_se(op.se, i);
          } else if constexpr (std::is_same_v<O, ConvolveOp>) {
            const ViolaJonesKernel& k = op.kernel;
            check(k.rect_w >= 1 && k.rect_h >= 1, i, "VJ rectangle size must be positive");
            check(k.offset_x >= 0 && k.offset_y >= 0, i, "VJ offset negative");
            check(k.offset_x + k.block_w() <= ViolaJonesKernel::kExtent &&
                      k.offset_y + k.block_h() <= ViolaJonesKernel::kExtent,
                  i, "VJ block exceeds kernel extent");
          }
        },
        node.op);
  }
  if (var_count != 1)
    throw std::runtime_error("invalid program: expected exactly one image variable, found " +
                             std::to_string(var_count));

  // Every node must contribute to the root.
  std::vector<uint8_t> reachable(n, 0);
  std::vector<int> stack = {prog.root};
  reachable[prog.root] = 1;
  while (!stack.empty()) {
    int i = stack.back();
    stack.pop_back();
    for (int in : prog.nodes[i].inputs)
      if (!reachable[in]) {
        reachable[in] = 1;
        stack.push_back(in);
      }
  }
  for (int i = 0; i < n; ++i) check(reachable[i], i, "node unreachable from root");

  switch (variant) {
    case GrammarVariant::Full:
      break;
    case GrammarVariant::HaarOnly:
      if (n != 2 || !std::holds_alternative<VarOp>(prog.nodes[0].op) ||
          !std::holds_alternative<ConvolveOp>(prog.nodes[1].op))
        throw std::runtime_error(
            "invalid program: restricted variant requires a single convolve on the image");
      break;
    case GrammarVariant::NoMorphology:
      for (int i = 0; i < n; ++i)
        check(!std::holds_alternative<MorphOp>(prog.nodes[i].op) &&
                  !std::holds_alternative<PtileOp>(prog.nodes[i].op),
              i, "morphology operator forbidden by variant");
      break;
    case GrammarVariant::NoHaar:
      for (int i = 0; i < n; ++i)
        check(!std::holds_alternative<ConvolveOp>(prog.nodes[i].op), i,
              "convolve forbidden by variant");
      break;
  }
}

GreyImage evaluate(const FeatureProgram& prog, const GreyImage& image, ProgramStats* stats) {
  const int n = static_cast<int>(prog.nodes.size());
  if (n == 0) throw std::runtime_error("evaluate: empty program");
  if (prog.root < 0 || prog.root >= n) throw std::runtime_error("evaluate: bad root index");
  if (stats) stats->invocations.assign(n, 0);

  std::vector<uint8_t> reachable(n, 0);
  std::vector<int> stack = {prog.root};
  reachable[prog.root] = 1;
  while (!stack.empty()) {
    int i = stack.back();
    stack.pop_back();
    for (int in : prog.nodes[i].inputs) {
      if (in < 0 || in >= i) throw std::runtime_error("evaluate: bad input index");
      if (!reachable[in]) {
        reachable[in] = 1;
        stack.push_back(in);
      }
    }
  }

  std::vector<GreyImage> values(n);
  for (int i = 0; i < n; ++i) {
    if (!reachable[i]) continue;
    const ProgramNode& node = prog.nodes[i];
    try {
      values[i] = std::visit(
          [&](const auto& op) -> GreyImage {
            using O = std::decay_t<decltype(op)>;
            if constexpr (std::is_same_v<O, VarOp>) {
              return image;
            } else if constexpr (std::is_same_v<O, BinaryOp>) {
              return apply_binary(op.kind, values[node.inputs[0]], values[node.inputs[1]]);
            } else if constexpr (std::is_same_v<O, SigmoidOp>) {
              return apply_sigmoid(values[node.inputs[0]], op.theta, op.lambda);
            } else if constexpr (std::is_same_v<O, GgmOp>) {
              return apply_ggm(values[node.inputs[0]], op.sigma);
            } else if constexpr (std::is_same_v<O, LaplaceOp>) {
              return apply_laplace(values[node.inputs[0]], op.sigma);
            } else if constexpr (std::is_same_v<O, LawsOp>) {
              return apply_laws(values[node.inputs[0]], op.u, op.v);
            } else if constexpr (std::is_same_v<O, GaborOp>) {
              return apply_gabor(values[node.inputs[0]], op.orientation, op.size, op.ratio,
                                 op.wavelength, op.envelope);
            } else if constexpr (std::is_same_v<O, MorphOp>) {
              return apply_morph(op.kind, values[node.inputs[0]],
                                 rasterize_se(op.se.orientation, op.se.major_radius,
                                              op.se.aspect_ratio));
            } else if constexpr (std::is_same_v<O, PtileOp>) {
              return apply_ptile(values[node.inputs[0]], op.p,
                                 rasterize_se(op.se.orientation, op.se.major_radius,
                                              op.se.aspect_ratio));
            } else {
              static_assert(std::is_same_v<O, ConvolveOp>);
              return apply_convolve(values[node.inputs[0]], op.kernel);
            }
          },
          node.op);
    } catch (const std::exception& e) {
      throw std::runtime_error("evaluate: node " + std::to_string(i) + " (" +
                               op_name(node.op) + "): " + e.what());
    }
    if (stats) stats->invocations[i] = 1;
  }
  return values[prog.root];
}

namespace {

class Serializer {
 public:
  explicit Serializer(const FeatureProgram& prog) : prog_(prog) {
    refcount_.assign(prog.nodes.size(), 0);
    label_.assign(prog.nodes.size(), -1);
    std::vector<uint8_t> seen(prog.nodes.size(), 0);
    std::vector<int> stack = {prog.root};
    seen[prog.root] = 1;
    while (!stack.empty()) {
      int i = stack.back();
      stack.pop_back();
      for (int in : prog_.nodes[i].inputs) {
        ++refcount_[in];
        if (!seen[in]) {
          seen[in] = 1;
          stack.push_back(in);
        }
      }
    }
  }

  std::string run() {
    emit(prog_.root);
    return out_.str();
  }

 private:
  void emit(int i) {
    const ProgramNode& node = prog_.nodes[i];
    if (std::holds_alternative<VarOp>(node.op)) {
      out_ << "I";  // the variable is implicitly shared, no label needed
      return;
    }
    if (label_[i] >= 0) {
      out_ << "#" << label_[i] << "#";
      return;
    }
    if (refcount_[i] >= 2) {
      label_[i] = next_label_++;
      out_ << "#" << label_[i] << "=";
    }
    out_ << "(" << op_name(node.op);
    for (int in : node.inputs) {
      out_ << " ";
      emit(in);
    }
    std::visit(
        [&](const auto& op) {
          using O = std::decay_t<decltype(op)>;
          if constexpr (std::is_same_v<O, SigmoidOp>) {
            out_ << " " << format_real(op.theta) << " " << format_real(op.lambda);
          } else if constexpr (std::is_same_v<O, GgmOp> || std::is_same_v<O, LaplaceOp>) {
            out_ << " " << format_real(op.sigma);
          } else if constexpr (std::is_same_v<O, LawsOp>) {
            out_ << " " << laws_name(op.u) << " " << laws_name(op.v);
          } else if constexpr (std::is_same_v<O, GaborOp>) {
            out_ << " " << format_real(op.orientation) << " " << format_real(op.size) << " "
                 << format_real(op.ratio) << " " << format_real(op.wavelength) << " "
                 << envelope_name(op.envelope);
          } else if constexpr (std::is_same_v<O, MorphOp>) {
            emit_se(op.se);
          } else if constexpr (std::is_same_v<O, PtileOp>) {
            out_ << " " << format_real(op.p);
            emit_se(op.se);
          } else if constexpr (std::is_same_v<O, ConvolveOp>) {
            out_ << " (vj " << vj_kind_name(op.kernel.kind) << " " << op.kernel.rect_w << " "
                 << op.kernel.rect_h << " " << op.kernel.offset_x << " " << op.kernel.offset_y
                 << ")";
          }
        },
        node.op);
    out_ << ")";
  }

  void emit_se(const SeParams& se) {
    out_ << " (se " << format_real(se.orientation) << " " << se.major_radius << " "
         << format_real(se.aspect_ratio) << ")";
  }

  const FeatureProgram& prog_;
  std::vector<int> refcount_;
  std::vector<int> label_;
  int next_label_ = 0;
  std::ostringstream out_;
};

struct Token {
  enum Kind { LParen, RParen, Atom, End } kind;
  std::string text;
  int line, col;
};

class Parser {
 public:
  explicit Parser(const std::string& text) : text_(text) {}

  FeatureProgram run() {
    next();
    FeatureProgram prog;
    prog.root = parse_expr();
    if (tok_.kind != Token::End) fail("trailing text after program");
    prog.nodes = std::move(nodes_);
    return prog;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) {
    throw std::runtime_error("parse error at line " + std::to_string(tok_.line) + ", col " +
                             std::to_string(tok_.col) + ": " + msg);
  }

  void next() {
    while (pos_ < text_.size() &&
           (text_[pos_] == ' ' || text_[pos_] == '\t' || text_[pos_] == '\n' ||
            text_[pos_] == '\r')) {
      if (text_[pos_] == '\n') {
        ++line_;
        col_ = 1;
      } else {
        ++col_;
      }
      ++pos_;
    }
    tok_.line = line_;
    tok_.col = col_;
    if (pos_ >= text_.size()) {
      tok_.kind = Token::End;
      tok_.text.clear();
      return;
    }
    char c = text_[pos_];
    if (c == '(') {
      tok_.kind = Token::LParen;
      tok_.text = "(";
      ++pos_;
      ++col_;
      return;
    }
    if (c == ')') {
      tok_.kind = Token::RParen;
      tok_.text = ")";
      ++pos_;
      ++col_;
      return;
    }
    size_t start = pos_;
    while (pos_ < text_.size() && !std::isspace(static_cast<unsigned char>(text_[pos_])) &&
           text_[pos_] != '(' && text_[pos_] != ')') {
      ++pos_;
      ++col_;
    }
    tok_.kind = Token::Atom;
    tok_.text = text_.substr(start, pos_ - start);
  }

  int add(OpSpec op, std::vector<int> inputs) {
    nodes_.push_back({std::move(op), std::move(inputs)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  int parse_expr() {
    if (tok_.kind == Token::Atom) {
      const std::string atom = tok_.text;
      if (atom == "I") {
        next();
        if (var_index_ < 0) var_index_ = add(VarOp{}, {});
        return var_index_;
      }
      if (atom.size() >= 3 && atom.front() == '#') {
        if (atom.back() == '#') {  // reference: #N#
          int label = parse_label(atom.substr(1, atom.size() - 2));
          auto it = labels_.find(label);
          if (it == labels_.end()) fail("undefined node label " + atom);
          next();
          return it->second;
        }
        if (atom.back() == '=') {  // definition: #N=(...)
          int label = parse_label(atom.substr(1, atom.size() - 2));
          if (labels_.count(label)) fail("duplicate node label #" + std::to_string(label) + "=");
          next();
          int idx = parse_expr();
          labels_[label] = idx;
          return idx;
        }
      }
      fail("expected expression, got '" + atom + "'");
    }
    if (tok_.kind != Token::LParen) fail("expected expression");
    next();
    if (tok_.kind != Token::Atom) fail("expected operator name");
    std::string name = tok_.text;
    next();
    int idx = parse_operator(name);
    expect_rparen();
    return idx;
  }

  int parse_label(const std::string& digits) {
    if (digits.empty()) fail("empty node label");
    for (char c : digits)
      if (!std::isdigit(static_cast<unsigned char>(c))) fail("bad node label digits");
    return std::atoi(digits.c_str());
  }

  void expect_rparen() {
    if (tok_.kind != Token::RParen) fail("expected ')'");
    next();
  }

  double read_real() {
    if (tok_.kind != Token::Atom) fail("expected number");
    char* end = nullptr;
    double v = std::strtod(tok_.text.c_str(), &end);
    if (end != tok_.text.c_str() + tok_.text.size()) fail("bad number '" + tok_.text + "'");
    next();
    return v;
  }

  int read_int() {
    double v = read_real();
    int iv = static_cast<int>(v);
    if (static_cast<double>(iv) != v) fail("expected integer");
    return iv;
  }

  LawsVector read_laws() {
    if (tok_.kind != Token::Atom) fail("expected Laws vector name");
    std::string t = tok_.text;
    next();
    if (t == "L5") return LawsVector::L5;
    if (t == "E5") return LawsVector::E5;
    if (t == "S5") return LawsVector::S5;
    if (t == "R5") return LawsVector::R5;
    if (t == "W5") return LawsVector::W5;
    fail("unknown Laws vector '" + t + "'");
  }

  GaborEnvelope read_envelope() {
    if (tok_.kind != Token::Atom) fail("expected envelope name");
    std::string t = tok_.text;
    next();
    if (t == "sin") return GaborEnvelope::Sin;
    if (t == "cos") return GaborEnvelope::Cos;
    if (t == "both") return GaborEnvelope::Both;
    fail("unknown envelope '" + t + "'");
  }

  SeParams parse_se() {
    if (tok_.kind != Token::LParen) fail("expected '(se ...)'");
    next();
    if (tok_.kind != Token::Atom || tok_.text != "se") fail("expected 'se'");
    next();
    SeParams se;
    se.orientation = read_real();
    se.major_radius = read_int();
    se.aspect_ratio = read_real();
    expect_rparen();
    return se;
  }

  ViolaJonesKernel parse_vj() {
    if (tok_.kind != Token::LParen) fail("expected '(vj ...)'");
    next();
    if (tok_.kind != Token::Atom || tok_.text != "vj") fail("expected 'vj'");
    next();
    if (tok_.kind != Token::Atom) fail("expected kernel kind");
    std::string t = tok_.text;
    next();
    ViolaJonesKernel k;
    if (t == "h2") k.kind = ViolaJonesKernel::Kind::Horizontal2;
    else if (t == "v2") k.kind = ViolaJonesKernel::Kind::Vertical2;
    else if (t == "h3") k.kind = ViolaJonesKernel::Kind::Horizontal3;
    else if (t == "v3") k.kind = ViolaJonesKernel::Kind::Vertical3;
    else if (t == "quad") k.kind = ViolaJonesKernel::Kind::Quad;
    else fail("unknown kernel kind '" + t + "'");
    k.rect_w = read_int();
    k.rect_h = read_int();
    k.offset_x = read_int();
    k.offset_y = read_int();
    expect_rparen();
    return k;
  }

  int parse_operator(const std::string& name) {
    if (name == "mult" || name == "normDiff" || name == "scaledSub" || name == "blend") {
      BinaryOpKind kind = name == "mult"       ? BinaryOpKind::Mult
                          : name == "normDiff" ? BinaryOpKind::NormDiff
                          : name == "scaledSub" ? BinaryOpKind::ScaledSub
                                                : BinaryOpKind::Blend;
      int a = parse_expr();
      int b = parse_expr();
      return add(BinaryOp{kind}, {a, b});
    }
    if (name == "sigmoid") {
      int in = parse_expr();
      double theta = read_real();
      double lambda = read_real();
      return add(SigmoidOp{theta, lambda}, {in});
    }
    if (name == "ggm") {
      int in = parse_expr();
      return add(GgmOp{read_real()}, {in});
    }
    if (name == "laplace") {
      int in = parse_expr();
      return add(LaplaceOp{read_real()}, {in});
    }
    if (name == "laws") {
      int in = parse_expr();
      LawsVector u = read_laws();
      LawsVector v = read_laws();
      return add(LawsOp{u, v}, {in});
    }
    if (name == "gabor") {
      int in = parse_expr();
      GaborOp op;
      op.orientation = read_real();
      op.size = read_real();
      op.ratio = read_real();
      op.wavelength = read_real();
      op.envelope = read_envelope();
      return add(op, {in});
    }
    if (name == "erode" || name == "dilate" || name == "open" || name == "close") {
      MorphKind kind = name == "erode"    ? MorphKind::Erode
                       : name == "dilate" ? MorphKind::Dilate
                       : name == "open"   ? MorphKind::Open
                                          : MorphKind::Close;
      int in = parse_expr();
      return add(MorphOp{kind, parse_se()}, {in});
    }
    if (name == "ptile") {
      int in = parse_expr();
      double p = read_real();
      return add(PtileOp{p, parse_se()}, {in});
    }
    if (name == "convolve") {
      int in = parse_expr();
      return add(ConvolveOp{parse_vj()}, {in});
    }
    fail("unknown operator '" + name + "'");
  }

  const std::string& text_;
  size_t pos_ = 0;
  int line_ = 1, col_ = 1;
  Token tok_{Token::End, "", 1, 1};
  std::vector<ProgramNode> nodes_;
  std::map<int, int> labels_;
  int var_index_ = -1;
};

}  // namespace

std::string serialize_program(const FeatureProgram& prog) {
  if (prog.nodes.empty()) throw std::runtime_error("serialize_program: empty program");
  return Serializer(prog).run();
}

FeatureProgram parse_program(const std::string& text) { return Parser(text).run(); }

}  // namespace locdet
