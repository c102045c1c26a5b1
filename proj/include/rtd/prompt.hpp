#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "rtd/model.hpp"
#include "rtd/tokenizer.hpp"

namespace rtd {

class TemplateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class TaskKind { classification, regression };

std::string_view task_kind_name(TaskKind kind);

/// Example text fields keyed by placeholder name ("input", "premise", ...).
using Fields = std::map<std::string, std::string>;

/// A prompt pattern with one {label} slot. Text on either side of the
/// separator becomes a separate model segment.
struct Template {
  std::string name;
  std::string pattern;
  std::vector<std::string> label_words;
  /// Dataset label value for each label word, same order.
  std::vector<std::string> label_values;
  TaskKind kind = TaskKind::classification;
  double lower = 0.0;  // regression bounds
  double upper = 1.0;
  std::string separator = "<SEP>";

  std::size_t num_classes() const { return label_words.size(); }
  /// Placeholders other than {label}, in order of appearance.
  std::vector<std::string> fields() const;
  /// Throws TemplateError if an invariant is violated.
  void validate() const;
};

/// Placeholder names a pattern may use besides {label}.
const std::vector<std::string>& known_placeholders();

/// Section-based text format:
///
///   [name]         sst2
///   [pattern]      {input} <SEP> This movie is {label}!!
///   [label_words]  one per line
///   [label_values] optional, one per line, parallel to label_words
///   [task]         classification | regression
///   [bounds]       "V1 V2", regression only
///   [separator]    optional, defaults to <SEP>
///
/// Each section header sits on its own line; '#' starts a comment line.
Template parse_template(std::string_view text);
Template load_template(const std::filesystem::path& path);
std::string format_template(const Template& tmpl);

Template builtin_template(std::string_view name);
std::vector<std::string> builtin_template_names();

/// Substitutes fields and the label word. The label word's byte span is
/// marked in whichever segment it lands in.
std::vector<Segment> render(const Template& tmpl, const Fields& fields, std::string_view label_word);

enum class DegeneratePolicy { error, clamp };

/// Scores at or below zero in every class are lifted to this floor under
/// DegeneratePolicy::clamp.
inline constexpr double kScoreFloor = 1e-9;

struct Prediction {
  std::vector<double> raw_p_replaced;  // per class (classification) or single entry
  std::vector<double> class_probs;     // empty for regression
  int label = -1;                      // argmax class, ties to the lowest index
  double value = 0.0;                  // regression output
  bool degenerate = false;
};

/// Normalizes per-class scores s_m = 1 - P(replaced) into class
/// probabilities and picks the argmax.
Prediction normalize_scores(std::span<const double> scores, DegeneratePolicy policy = DegeneratePolicy::error);

/// Same as normalize_scores on s_m = 1 - p_replaced[m].
Prediction predict_from_replaced(std::span<const double> p_replaced,
                                 DegeneratePolicy policy = DegeneratePolicy::error);

/// |upper - lower| * p_replaced + lower, exact at p = 0 and p = 1.
double regression_value(double p_replaced, double lower, double upper);

/// Mean P(replaced) over the pieces of a marked label word.
double marked_p_replaced(const DiscriminatorOutput& out, const TokenRange& range);

struct ScoringOptions {
  std::size_t max_len = 0;  // 0: use the model's max_positions
  DegeneratePolicy policy = DegeneratePolicy::error;
};

/// Encoded rendering for one label word.
Encoding encode_prompt(const Template& tmpl, const Fields& fields, std::string_view label_word, const Vocab& vocab,
                       std::size_t max_len);

/// P(label word replaced) per class, one forward pass per label word.
template <typename T>
std::vector<double> label_word_replaced(const Fields& fields, const Template& tmpl, const Parameters<T>& params,
                                        const Vocab& vocab, const ScoringOptions& options = {});

template <typename T>
Prediction classify(const Fields& fields, const Template& tmpl, const Parameters<T>& params, const Vocab& vocab,
                    const ScoringOptions& options = {});

template <typename T>
Prediction regress(const Fields& fields, const Template& tmpl, const Parameters<T>& params, const Vocab& vocab,
                   const ScoringOptions& options = {});

/// classify or regress depending on the template's task kind.
template <typename T>
Prediction predict(const Fields& fields, const Template& tmpl, const Parameters<T>& params, const Vocab& vocab,
                   const ScoringOptions& options = {});

}  // namespace rtd
