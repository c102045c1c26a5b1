#include "rtd/prompt.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace rtd {
namespace {

constexpr std::string_view kLabelPlaceholder = "label";

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

// Yields (literal, placeholder) pairs; placeholder empty at the end.
struct PatternPart {
  std::string literal;
  std::string placeholder;
};

std::vector<PatternPart> split_placeholders(std::string_view pattern) {
  std::vector<PatternPart> parts;
  std::string literal;
  std::size_t i = 0;
  while (i < pattern.size()) {
    if (pattern[i] == '{') {
      const auto close = pattern.find('}', i);
      if (close == std::string_view::npos) throw TemplateError("template: unterminated placeholder in pattern");
      parts.push_back({std::move(literal), std::string(pattern.substr(i + 1, close - i - 1))});
      literal.clear();
      i = close + 1;
    } else {
      literal.push_back(pattern[i++]);
    }
  }
  parts.push_back({std::move(literal), {}});
  return parts;
}

struct Builtin {
  const char* name;
  const char* pattern;
  std::vector<std::string> words;
  std::vector<std::string> values;
};

// Task templates and label words of the zero-shot evaluation suite. Label
// values follow the GLUE / SentEval conventions of each dataset.
const std::vector<Builtin>& builtins() {
  static const std::vector<Builtin> table = {
      {"sst2", "{input} <SEP> This movie is {label}!!", {"great", "terrible"}, {"1", "0"}},
      {"sst5", "This movie is {label}. <SEP> {input}", {"perfect", "good", "okay", "bad", "terrible"},
       {"4", "3", "2", "1", "0"}},
      {"mr", "It was {label}! <SEP> {input}", {"great", "terrible"}, {"1", "0"}},
      {"cr", "{input} <SEP> I really {label} this product.", {"love", "hate"}, {"1", "0"}},
      {"mpqa", "{input} <SEP> {label} good,", {"really", "not"}, {"1", "0"}},
      {"subj", "{label} speaking. <SEP> {input}", {"Subjectively", "Objectively"}, {"0", "1"}},
      {"trec", "The answer is about a {label}, <SEP> {input}",
       {"definition", "entity", "meaning", "person", "place", "number"}, {"0", "1", "2", "3", "4", "5"}},
      {"cola", "The grammar of the following sentence is {label}, <SEP> {input}", {"correct", "wrong"}, {"1", "0"}},
      {"mnli", "{premise} <SEP> ? {label}, {hypothesis}", {"Yes", "Maybe", "No"},
       {"entailment", "neutral", "contradiction"}},
      {"snli", "{premise} <SEP> ? {label}, {hypothesis}", {"Yes", "Maybe", "No"},
       {"entailment", "neutral", "contradiction"}},
      {"qnli", "{premise} <SEP> ? {label}! {hypothesis}", {"Yes", "No"}, {"entailment", "not_entailment"}},
      {"rte", "{premise} <SEP> ? {label}! {hypothesis}", {"Yes", "No"}, {"entailment", "not_entailment"}},
      {"mrpc", "{question1} <SEP> ? {label}, {question2}", {"Yes", "No"}, {"1", "0"}},
      {"qqp", "{question1} <SEP> ? {label}, {question2}", {"Yes", "No"}, {"1", "0"}},
  };
  return table;
}

}  // namespace

std::string_view task_kind_name(TaskKind kind) {
  return kind == TaskKind::classification ? "classification" : "regression";
}

const std::vector<std::string>& known_placeholders() {
  static const std::vector<std::string> names = {"input",     "premise",   "hypothesis", "question1",
                                                 "question2", "sentence1", "sentence2"};
  return names;
}

std::vector<std::string> Template::fields() const {
  std::vector<std::string> out;
  for (const auto& part : split_placeholders(pattern)) {
    if (!part.placeholder.empty() && part.placeholder != kLabelPlaceholder &&
        std::find(out.begin(), out.end(), part.placeholder) == out.end()) {
      out.push_back(part.placeholder);
    }
  }
  return out;
}

void Template::validate() const {
  int label_slots = 0;
  for (const auto& part : split_placeholders(pattern)) {
    if (part.placeholder.empty()) continue;
    if (part.placeholder == kLabelPlaceholder) {
      ++label_slots;
    } else if (std::find(known_placeholders().begin(), known_placeholders().end(), part.placeholder) ==
               known_placeholders().end()) {
      throw TemplateError("template " + name + ": unknown placeholder {" + part.placeholder + "}");
    }
  }
  if (label_slots != 1) {
    throw TemplateError("template " + name + ": pattern must contain exactly one {label}, found " +
                        std::to_string(label_slots));
  }
  if (label_words.empty()) throw TemplateError("template " + name + ": no label words");
  for (const auto& w : label_words) {
    if (trim(w).empty()) throw TemplateError("template " + name + ": empty label word");
  }
  if (kind == TaskKind::classification) {
    if (label_words.size() < 2) throw TemplateError("template " + name + ": classification needs at least 2 label words");
    if (label_values.size() != label_words.size()) {
      throw TemplateError("template " + name + ": " + std::to_string(label_values.size()) + " label values for " +
                          std::to_string(label_words.size()) + " label words");
    }
  } else {
    if (label_words.size() != 1) throw TemplateError("template " + name + ": regression takes exactly one label word");
    if (!(lower < upper)) throw TemplateError("template " + name + ": regression bounds need V1 < V2");
  }
  if (separator.empty()) throw TemplateError("template " + name + ": empty separator");
}

Template parse_template(std::string_view text) {
  Template tmpl;
  std::map<std::string, std::vector<std::string>> sections;
  std::string current;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    const std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    if (line.front() == '[' && line.back() == ']' && line.find(' ') == std::string_view::npos &&
        line.find('{') == std::string_view::npos) {
      current = std::string(line.substr(1, line.size() - 2));
      if (sections.contains(current)) throw TemplateError("template: duplicate section [" + current + "]");
      sections[current];
      continue;
    }
    if (current.empty()) throw TemplateError("template: text outside of any section: " + std::string(line));
    sections[current].emplace_back(line);
  }
  for (const auto& [section, _] : sections) {
    static const std::vector<std::string> allowed = {"name", "pattern", "label_words", "label_values",
                                                     "task", "bounds",  "separator"};
    if (std::find(allowed.begin(), allowed.end(), section) == allowed.end()) {
      throw TemplateError("template: unknown section [" + section + "]");
    }
  }
  auto single = [&](const std::string& key) -> std::string {
    auto it = sections.find(key);
    if (it == sections.end() || it->second.empty()) return {};
    if (it->second.size() > 1) throw TemplateError("template: section [" + key + "] takes a single line");
    return it->second.front();
  };

  tmpl.name = single("name");
  if (tmpl.name.empty()) tmpl.name = "custom";
  tmpl.pattern = single("pattern");
  if (tmpl.pattern.empty()) throw TemplateError("template: missing [pattern]");
  if (auto sep = single("separator"); !sep.empty()) tmpl.separator = sep;
  tmpl.label_words = sections["label_words"];
  const std::string task = single("task");
  if (task.empty() || task == "classification") {
    tmpl.kind = TaskKind::classification;
  } else if (task == "regression") {
    tmpl.kind = TaskKind::regression;
  } else {
    throw TemplateError("template: unknown task kind '" + task + "'");
  }
  if (sections.contains("label_values")) {
    tmpl.label_values = sections["label_values"];
  } else {
    for (std::size_t i = 0; i < tmpl.label_words.size(); ++i) tmpl.label_values.push_back(std::to_string(i));
  }
  if (auto bounds = single("bounds"); !bounds.empty()) {
    std::istringstream b(bounds);
    if (!(b >> tmpl.lower >> tmpl.upper)) throw TemplateError("template: [bounds] must hold two numbers");
  } else if (tmpl.kind == TaskKind::regression) {
    throw TemplateError("template: regression requires [bounds]");
  }
  tmpl.validate();
  return tmpl;
}

Template load_template(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw TemplateError("cannot open template file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_template(buf.str());
}

std::string format_template(const Template& tmpl) {
  std::ostringstream out;
  out << "[name]\n" << tmpl.name << "\n[pattern]\n" << tmpl.pattern << "\n[task]\n" << task_kind_name(tmpl.kind) << '\n';
  out << "[label_words]\n";
  for (const auto& w : tmpl.label_words) out << w << '\n';
  if (tmpl.kind == TaskKind::classification) {
    out << "[label_values]\n";
    for (const auto& v : tmpl.label_values) out << v << '\n';
  } else {
    out << "[bounds]\n" << tmpl.lower << ' ' << tmpl.upper << '\n';
  }
  if (tmpl.separator != "<SEP>") out << "[separator]\n" << tmpl.separator << '\n';
  return out.str();
}

Template builtin_template(std::string_view name) {
  if (name == "stsb") {
    Template t;
    t.name = "stsb";
    t.pattern = "{sentence1} <SEP> ? {label}!! {sentence2}";
    t.label_words = {"NO"};
    t.kind = TaskKind::regression;
    t.lower = 0.0;
    t.upper = 5.0;
    t.validate();
    return t;
  }
  for (const auto& b : builtins()) {
    if (name == b.name) {
      Template t;
      t.name = b.name;
      t.pattern = b.pattern;
      t.label_words = b.words;
      t.label_values = b.values;
      t.validate();
      return t;
    }
  }
  throw TemplateError("no built-in template named '" + std::string(name) + "'");
}

std::vector<std::string> builtin_template_names() {
  std::vector<std::string> names;
  for (const auto& b : builtins()) names.emplace_back(b.name);
  names.emplace_back("stsb");
  return names;
}

std::vector<Segment> render(const Template& tmpl, const Fields& fields, std::string_view label_word) {
  std::vector<Segment> segments;
  std::string_view rest = tmpl.pattern;
  while (true) {
    const auto cut = rest.find(tmpl.separator);
    const std::string_view piece = trim(rest.substr(0, cut));
    Segment seg;
    for (const auto& part : split_placeholders(piece)) {
      seg.text += part.literal;
      if (part.placeholder.empty()) continue;
      if (part.placeholder == kLabelPlaceholder) {
        const std::size_t begin = seg.text.size();
        seg.text += label_word;
        seg.marked.push_back({begin, seg.text.size()});
        continue;
      }
      auto it = fields.find(part.placeholder);
      if (it == fields.end()) {
        throw TemplateError("template " + tmpl.name + ": unbound placeholder {" + part.placeholder + "}");
      }
      seg.text += it->second;
    }
    segments.push_back(std::move(seg));
    if (cut == std::string_view::npos) break;
    rest = rest.substr(cut + tmpl.separator.size());
  }
  return segments;
}

Prediction normalize_scores(std::span<const double> scores, DegeneratePolicy policy) {
  if (scores.empty()) throw TemplateError("normalize_scores: no classes");
  Prediction pred;
  std::vector<double> s(scores.begin(), scores.end());
  double total = 0.0;
  for (double v : s) total += v;
  if (!(total > 0.0)) {
    if (policy == DegeneratePolicy::error) {
      throw TemplateError("classify: every label word is scored as replaced; class probabilities are undefined");
    }
    pred.degenerate = true;
    total = 0.0;
    for (double& v : s) {
      v = std::max(v, kScoreFloor);
      total += v;
    }
  }
  pred.class_probs.resize(s.size());
  for (std::size_t m = 0; m < s.size(); ++m) pred.class_probs[m] = s[m] / total;
  pred.label = 0;
  for (std::size_t m = 1; m < s.size(); ++m) {
    if (pred.class_probs[m] > pred.class_probs[static_cast<std::size_t>(pred.label)]) pred.label = static_cast<int>(m);
  }
  return pred;
}

Prediction predict_from_replaced(std::span<const double> p_replaced, DegeneratePolicy policy) {
  std::vector<double> scores(p_replaced.size());
  for (std::size_t m = 0; m < scores.size(); ++m) scores[m] = 1.0 - p_replaced[m];
  Prediction pred = normalize_scores(scores, policy);
  pred.raw_p_replaced.assign(p_replaced.begin(), p_replaced.end());
  return pred;
}

double regression_value(double p_replaced, double lower, double upper) {
  if (lower <= upper) return std::lerp(lower, upper, p_replaced);
  return std::abs(upper - lower) * p_replaced + lower;
}

double marked_p_replaced(const DiscriminatorOutput& out, const TokenRange& range) {
  if (range.size() == 0 || range.end > out.p_replaced.size()) {
    throw TemplateError("label word range outside the discriminator output");
  }
  double total = 0.0;
  for (std::size_t t = range.begin; t < range.end; ++t) total += out.p_replaced[t];
  return total / static_cast<double>(range.size());
}

Encoding encode_prompt(const Template& tmpl, const Fields& fields, std::string_view label_word, const Vocab& vocab,
                       std::size_t max_len) {
  const auto segments = render(tmpl, fields, label_word);
  Encoding enc = build_sequence(segments, vocab, max_len);
  if (enc.marked.size() != 1) throw TemplateError("template " + tmpl.name + ": expected one marked label word");
  return enc;
}

template <typename T>
std::vector<double> label_word_replaced(const Fields& fields, const Template& tmpl, const Parameters<T>& params,
                                        const Vocab& vocab, const ScoringOptions& options) {
  const std::size_t max_len =
      options.max_len ? options.max_len : static_cast<std::size_t>(params.config.max_positions);
  std::vector<double> replaced;
  replaced.reserve(tmpl.label_words.size());
  for (const auto& word : tmpl.label_words) {
    const Encoding enc = encode_prompt(tmpl, fields, word, vocab, max_len);
    const DiscriminatorOutput out = discriminator_forward<T>(enc.ids, enc.segment_ids, params);
    replaced.push_back(marked_p_replaced(out, enc.marked.front()));
  }
  return replaced;
}

template <typename T>
Prediction classify(const Fields& fields, const Template& tmpl, const Parameters<T>& params, const Vocab& vocab,
                    const ScoringOptions& options) {
  if (tmpl.kind != TaskKind::classification) throw TemplateError("classify: template " + tmpl.name + " is not a classification template");
  return predict_from_replaced(label_word_replaced(fields, tmpl, params, vocab, options), options.policy);
}

template <typename T>
Prediction regress(const Fields& fields, const Template& tmpl, const Parameters<T>& params, const Vocab& vocab,
                   const ScoringOptions& options) {
  if (tmpl.kind != TaskKind::regression) throw TemplateError("regress: template " + tmpl.name + " is not a regression template");
  Prediction pred;
  pred.raw_p_replaced = label_word_replaced(fields, tmpl, params, vocab, options);
  pred.value = regression_value(pred.raw_p_replaced.front(), tmpl.lower, tmpl.upper);
  return pred;
}

template <typename T>
Prediction predict(const Fields& fields, const Template& tmpl, const Parameters<T>& params, const Vocab& vocab,
                   const ScoringOptions& options) {
  return tmpl.kind == TaskKind::classification ? classify(fields, tmpl, params, vocab, options)
                                               : regress(fields, tmpl, params, vocab, options);
}

#define RTD_INSTANTIATE_PROMPT(T)                                                                              \
  template std::vector<double> label_word_replaced<T>(const Fields&, const Template&, const Parameters<T>&,    \
                                                      const Vocab&, const ScoringOptions&);                    \
  template Prediction classify<T>(const Fields&, const Template&, const Parameters<T>&, const Vocab&,          \
                                  const ScoringOptions&);                                                      \
  template Prediction regress<T>(const Fields&, const Template&, const Parameters<T>&, const Vocab&,           \
                                 const ScoringOptions&);                                                       \
  template Prediction predict<T>(const Fields&, const Template&, const Parameters<T>&, const Vocab&,           \
                                 const ScoringOptions&);

RTD_INSTANTIATE_PROMPT(float)
RTD_INSTANTIATE_PROMPT(double)

}  // namespace rtd
