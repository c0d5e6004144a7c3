#include <algorithm>
#include <cctype>
#include <string>

#include "bilevel/error.hpp"
#include "bilevel/hypergrad.hpp"

namespace bilevel {

namespace {

std::string normalize(std::string_view name) {
  std::string out;
  for (char c : name) {
    if (c == '-' || c == '_' || c == ' ') continue;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

}  // namespace

const std::vector<MethodComposition>& named_methods() {
  static const std::vector<MethodComposition> table = {
      {"RHG", Paradigm::kMetaFeature, InnerRule::kGD, ReverseMethod{},
       "full reverse-mode hypergradient through the unrolled inner loop"},
      {"TRHG", Paradigm::kMetaFeature, InnerRule::kGD, TruncatedReverseMethod{},
       "reverse mode over the last K inner steps"},
      {"HOAG", Paradigm::kMetaFeature, InnerRule::kGD, ImplicitMethod{},
       "implicit differentiation with a CG solve at y_T"},
      {"MAML", Paradigm::kMetaInit, InnerRule::kGD, ReverseMethod{},
       "learned initialization, second-order backprop"},
      {"FMAML", Paradigm::kMetaInit, InnerRule::kGD, FirstOrderMethod{},
       "learned initialization, first-order approximation"},
      {"MT-net", Paradigm::kMetaInit, InnerRule::kMTNetMask, ReverseMethod{},
       "learned initialization with per-segment soft update masks"},
      {"Meta-SGD", Paradigm::kMetaInit, InnerRule::kMetaSGD, ReverseMethod{},
       "learned initialization with per-coordinate learning rates"},
      {"WarpGrad", Paradigm::kMetaInit, InnerRule::kWarpGradDiag, ReverseMethod{},
       "learned initialization with a diagonal gradient warp"},
      {"DARTS", Paradigm::kMetaFeature, InnerRule::kGD, DartsMethod{},
       "one-step hypergradient with finite-difference second-order term"},
      {"BDA", Paradigm::kMetaFeature, InnerRule::kBDA, ReverseMethod{},
       "inner dynamics aggregate LL and UL gradients"},
  };
  return table;
}

MethodComposition compose_named_method(std::string_view name) {
  const std::string key = normalize(name);
  const auto& table = named_methods();
  auto it = std::find_if(table.begin(), table.end(),
                         [&](const MethodComposition& m) { return normalize(m.name) == key; });
  if (it != table.end()) return *it;

  std::string valid;
  for (const auto& m : table) valid += (valid.empty() ? "" : ", ") + m.name;
  throw Error(ErrorCode::kUnknownMethod,
              "unknown method '" + std::string(name) + "'; valid names: " + valid);
}

}  // namespace bilevel
