// Acceptance suite: one PASS/FAIL line per criterion. Exit status is nonzero
// when any primary criterion fails. Checkpoint-dependent criteria print SKIP
// unless their assets are available (see README).

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "rtd/eval.hpp"
#include "rtd/metrics.hpp"
#include "rtd/model.hpp"
#include "rtd/pretrain.hpp"
#include "rtd/prompt.hpp"
#include "rtd/weights.hpp"

namespace fs = std::filesystem;
using namespace rtd;

namespace {

// Tolerances and budgets.
constexpr double kNormalizationTol = 1e-9;
constexpr double kNormalizationSeconds = 1.0;
constexpr double kGradTol = 1e-4;
constexpr double kGradSeconds = 60.0;
constexpr double kDiscDropFraction = 0.30;
constexpr double kAucFloor = 0.75;
constexpr double kPretrainSeconds = 600.0;
constexpr double kOracleProbTol = 1e-12;
constexpr double kMetricTol = 1e-9;
constexpr double kParityTol = 1e-3;

int primary_failures = 0;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

void report(const std::string& name, bool pass, const std::string& detail, bool primary = true) {
  std::cout << (pass ? "PASS" : "FAIL") << "  " << name << ": " << detail << std::endl;
  if (!pass && primary) ++primary_failures;
}

void skip(const std::string& name, const std::string& why) { std::cout << "SKIP  " << name << ": " << why << std::endl; }

template <typename... Args>
std::string fmt(Args&&... args) {
  std::ostringstream out;
  out.precision(6);
  (out << ... << args);
  return out.str();
}

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof(double)) == 0; }

std::vector<double> random_replaced(Rng& rng, std::size_t m) {
  std::vector<double> p(m);
  for (double& v : p) v = rng.uniform();
  return p;
}

// ---------------------------------------------------------------------------

void normalization() {
  const auto start = Clock::now();
  Rng rng(1);
  const std::size_t sizes[] = {2, 3, 5, 6};
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const auto p = random_replaced(rng, sizes[i % 4]);
    const Prediction pred = predict_from_replaced(p);
    double sum = 0.0;
    for (double q : pred.class_probs) sum += q;
    worst = std::max(worst, std::abs(sum - 1.0));
  }
  const double elapsed = seconds_since(start);
  report("class probability normalization", worst <= kNormalizationTol && elapsed < kNormalizationSeconds,
         fmt("max |sum - 1| = ", worst, " over 1000 vectors, ", elapsed, " s"));
}

void argmax_invariance() {
  Rng rng(2);
  const std::size_t sizes[] = {2, 3, 5, 6};
  int bitwise_dyadic = 0, bitwise_any = 0, argmax_any = 0;
  for (int i = 0; i < 100; ++i) {
    std::vector<double> s = random_replaced(rng, sizes[i % 4]);
    for (double& v : s) v = 1.0 - v;
    const Prediction base = normalize_scores(s);

    const double dyadic = std::ldexp(1.0, static_cast<int>(rng.index(41)) - 20);
    const double any = std::exp(rng.uniform() * 20.0 - 10.0);
    auto scaled = [&](double c) {
      std::vector<double> out = s;
      for (double& v : out) v *= c;
      return normalize_scores(out);
    };
    auto identical = [&](const Prediction& p) {
      bool same = p.label == base.label;
      for (std::size_t m = 0; m < s.size(); ++m) same = same && same_bits(p.class_probs[m], base.class_probs[m]);
      return same;
    };
    bitwise_dyadic += identical(scaled(dyadic));
    const Prediction a = scaled(any);
    bitwise_any += identical(a);
    argmax_any += a.label == base.label;
  }
  report("argmax invariance under score scaling", bitwise_dyadic == 100 && argmax_any == 100,
         fmt("bitwise identical for power-of-two c: ", bitwise_dyadic, "/100; argmax unchanged for arbitrary c: ",
             argmax_any, "/100 (bitwise ", bitwise_any, "/100)"));
}

void gradients() {
  const auto start = Clock::now();
  ModelConfig dcfg;  // 2 layers, hidden 16, heads 2, vocab 50
  ModelConfig gcfg = dcfg;
  gcfg.head_role = HeadRole::generator;
  Rng rng(3);
  const auto disc = random_parameters<double>(dcfg, rng);
  const auto gen = random_parameters<double>(gcfg, rng);
  const double lambda = 50.0;

  const Vocab vocab = toy_vocab(50);
  const std::vector<int> ids = {2, 10, 11, 12, 13, 3, 14, 15, 16, 3, 0, 0};
  std::vector<int> segs = {0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1};
  const MaskPlan plan = make_mask_plan(ids, vocab.special(), 0.3, rng);
  const CorruptedBatch batch = corrupt<double>(ids, segs, plan, gen, vocab.special().mask, rng);

  auto gen_grad = Parameters<double>::zeros(gcfg);
  auto disc_grad = Parameters<double>::zeros(dcfg);
  mlm_loss(batch, gen, &gen_grad);
  disc_loss(batch, disc, &disc_grad, lambda);

  const double mlm_err = grad_check(
      [&](const Vector<double>& t) {
        auto p = gen;
        unflatten(t, p);
        return mlm_loss(batch, p);
      },
      flatten(gen), flatten(gen_grad));
  auto plain_disc_grad = Parameters<double>::zeros(dcfg);
  disc_loss(batch, disc, &plain_disc_grad);
  const double disc_err = grad_check(
      [&](const Vector<double>& t) {
        auto p = disc;
        unflatten(t, p);
        return disc_loss(batch, p);
      },
      flatten(disc), flatten(plain_disc_grad));

  const Vector<double> g_flat = flatten(gen);
  const Vector<double> d_flat = flatten(disc);
  Vector<double> theta(g_flat.size() + d_flat.size());
  theta << g_flat, d_flat;
  Vector<double> analytic(theta.size());
  analytic << flatten(gen_grad), flatten(disc_grad);
  const double sum_err = grad_check(
      [&](const Vector<double>& t) {
        auto g = gen;
        auto d = disc;
        unflatten(Vector<double>(t.head(g_flat.size())), g);
        unflatten(Vector<double>(t.tail(d_flat.size())), d);
        return mlm_loss(batch, g) + lambda * disc_loss(batch, d);
      },
      theta, analytic);
  const double elapsed = seconds_since(start);
  const double worst = std::max({mlm_err, disc_err, sum_err});
  report("gradient check on the toy model", worst < kGradTol && elapsed < kGradSeconds,
         fmt("max relative error L_MLM ", mlm_err, ", L_Disc ", disc_err, ", combined ", sum_err, "; ", elapsed, " s"));
}

struct ToyModel {
  TrainConfig config;
  Parameters<float> generator;
  Parameters<float> discriminator;
};

ToyModel toy_pretraining() {
  const auto start = Clock::now();
  TrainConfig cfg;  // vocab 30, 2000 steps, seed 1
  PretrainResult result = run_pretraining(cfg);
  const double elapsed = seconds_since(start);
  const std::size_t window = 50;
  const double initial = mean_disc_loss(result.history, 0, window);
  const double final = mean_disc_loss(result.history, result.history.size() - window, window);
  const double drop = 1.0 - final / initial;

  const MarkovCorpus corpus(cfg.vocab_size, cfg.successors, cfg.seed);
  Rng held_out(cfg.seed + 1000);
  std::vector<std::vector<int>> sequences;
  for (int i = 0; i < 200; ++i) sequences.push_back(corpus.sample(cfg.sequence_length, held_out));
  const double auc = detection_auc(result.state.generator, result.state.discriminator,
                                   std::span<const std::vector<int>>(sequences), toy_vocab(cfg.vocab_size).special(),
                                   cfg.mask_rate, held_out);
  report("toy pre-training", drop >= kDiscDropFraction && auc >= kAucFloor && elapsed < kPretrainSeconds,
         fmt(cfg.steps, " steps, L_Disc ", initial, " -> ", final, " (drop ", 100 * drop, "%), held-out AUC ", auc,
             ", ", elapsed, " s"));
  return {cfg, result.state.generator, result.state.discriminator};
}

void sampled_equal_rule() {
  const int vocab = 4;
  const int mask_id = 3;
  long checked = 0, wrong = 0;
  // Every source sequence of length 3, every mask subset, every sample tuple.
  for (int code = 0; code < 64; ++code) {
    const std::vector<int> ids = {code % 4, (code / 4) % 4, code / 16};
    const std::vector<int> segs(3, 0);
    for (int subset = 1; subset < 8; ++subset) {
      MaskPlan plan;
      for (int t = 0; t < 3; ++t) {
        if (subset & (1 << t)) plan.positions.push_back(t);
      }
      plan.k = plan.positions.size();
      int tuples = 1;
      for (std::size_t i = 0; i < plan.k; ++i) tuples *= vocab;
      for (int tuple = 0; tuple < tuples; ++tuple) {
        std::vector<int> sampled;
        for (int rest = tuple; sampled.size() < plan.k; rest /= vocab) sampled.push_back(rest % vocab);
        CorruptedBatch b = mask_tokens(ids, segs, plan, mask_id);
        apply_replacements(b, sampled);
        for (std::size_t t = 0; t < 3; ++t) {
          const auto at = std::find(plan.positions.begin(), plan.positions.end(), static_cast<int>(t));
          const bool masked = at != plan.positions.end();
          const int token = masked ? sampled[static_cast<std::size_t>(at - plan.positions.begin())] : ids[t];
          const TokenLabel expected = token == ids[t] ? TokenLabel::original : TokenLabel::replaced;
          ++checked;
          if (b.rtd_labels[t] != expected || b.x_corrupt[t] != token) ++wrong;
        }
      }
    }
  }
  // The same rule through the sampling path of a vocab-4 generator.
  ModelConfig cfg;
  cfg.vocab_size = vocab;
  cfg.head_role = HeadRole::generator;
  Rng rng(4);
  const auto gen = random_parameters<double>(cfg, rng, 1.0);
  SpecialIds special;
  special.pad = special.unk = special.cls = special.sep = -1;
  special.mask = mask_id;
  const std::vector<int> ids = {0, 1, 2, 0, 1, 2};
  const std::vector<int> segs(ids.size(), 0);
  long sampled_equal = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    const MaskPlan plan = make_mask_plan(ids, special, 0.5, rng);
    const CorruptedBatch b = corrupt<double>(ids, segs, plan, gen, mask_id, rng);
    for (std::size_t t = 0; t < ids.size(); ++t) {
      ++checked;
      const bool same = b.x_corrupt[t] == ids[t];
      if (same && std::find(plan.positions.begin(), plan.positions.end(), static_cast<int>(t)) != plan.positions.end()) {
        ++sampled_equal;
      }
      if ((b.rtd_labels[t] == TokenLabel::original) != same) ++wrong;
    }
  }
  report("sampled-equal tokens are labelled original", wrong == 0 && sampled_equal > 0,
         fmt(checked, " labels checked, ", wrong, " mismatches, ", sampled_equal, " sampled-equal draws"));
}

std::string random_text(Rng& rng, int vocab_size, int min_len, int max_len) {
  const int len = min_len + static_cast<int>(rng.index(static_cast<std::size_t>(max_len - min_len + 1)));
  std::string text;
  for (int i = 0; i < len; ++i) {
    if (i) text += ' ';
    text += "w" + std::to_string(rng.index(static_cast<std::size_t>(vocab_size - kToySpecialCount)));
  }
  return text;
}

void pipeline_oracle() {
  const int vocab_size = 30;
  const Vocab vocab = toy_vocab(vocab_size);
  ModelConfig cfg;
  cfg.vocab_size = vocab_size;
  Rng rng(5);
  const auto params = random_parameters<double>(cfg, rng, 0.5);
  const std::size_t sizes[] = {2, 3, 5, 6};
  int argmax_agree = 0;
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    Template t;
    t.name = "toy";
    const bool pair = i % 2;
    t.pattern = pair ? "{premise} <SEP> w2 {label} w3 {hypothesis}" : "{input} <SEP> w1 {label}";
    for (std::size_t m = 0; m < sizes[i % 4]; ++m) {
      // Multi-piece label words exercise the piece mean.
      t.label_words.push_back(m % 2 ? "w" + std::to_string(4 + m) : "w" + std::to_string(10 + m) + " w3");
      t.label_values.push_back(std::to_string(m));
    }
    Fields fields;
    if (pair) {
      fields["premise"] = random_text(rng, vocab_size, 1, 8);
      fields["hypothesis"] = random_text(rng, vocab_size, 1, 8);
    } else {
      fields["input"] = random_text(rng, vocab_size, 1, 12);
    }

    std::vector<double> s;
    for (const auto& word : t.label_words) {
      const Encoding enc = build_sequence(render(t, fields, word), vocab, 64);
      const auto out = discriminator_forward<double>(enc.ids, enc.segment_ids, params);
      double total = 0.0;
      for (std::size_t k = enc.marked[0].begin; k < enc.marked[0].end; ++k) total += out.p_replaced[k];
      s.push_back(1.0 - total / static_cast<double>(enc.marked[0].size()));
    }
    double sum = 0.0;
    for (double v : s) sum += v;
    std::size_t best = 0;
    for (std::size_t m = 1; m < s.size(); ++m) {
      if (s[m] > s[best]) best = m;
    }
    const Prediction pred = classify(fields, t, params, vocab);
    argmax_agree += pred.label == static_cast<int>(best);
    for (std::size_t m = 0; m < s.size(); ++m) worst = std::max(worst, std::abs(pred.class_probs[m] - s[m] / sum));
  }
  report("classify matches a brute-force class loop", argmax_agree == 50 && worst <= kOracleProbTol,
         fmt("argmax agreement ", argmax_agree, "/50, max probability difference ", worst));
}

void regression_bounds() {
  const int vocab_size = 30;
  const Vocab vocab = toy_vocab(vocab_size);
  ModelConfig cfg;
  cfg.vocab_size = vocab_size;
  Rng rng(6);
  const auto params = random_parameters<double>(cfg, rng, 0.5);
  Template t;
  t.name = "toy-regression";
  t.pattern = "{sentence1} <SEP> w2 {label} {sentence2}";
  t.label_words = {"w4"};
  t.kind = TaskKind::regression;

  int inside = 0, exact_ends = 0;
  for (int i = 0; i < 1000; ++i) {
    t.lower = rng.uniform() * 10.0 - 5.0;
    t.upper = t.lower + 0.01 + rng.uniform() * 10.0;
    const Fields fields = {{"sentence1", random_text(rng, vocab_size, 1, 8)},
                           {"sentence2", random_text(rng, vocab_size, 1, 8)}};
    const double y = regress(fields, t, params, vocab).value;
    inside += y >= t.lower && y <= t.upper;
    exact_ends += regression_value(0.0, t.lower, t.upper) == t.lower && regression_value(1.0, t.lower, t.upper) == t.upper;
  }
  // Saturated heads drive P(replaced) to exactly 0 and 1 through the pipeline.
  t.lower = 0.0;
  t.upper = 5.0;
  const Fields fields = {{"sentence1", "w5 w6"}, {"sentence2", "w7"}};
  auto saturated = params;
  saturated.disc_out_w.setZero();
  saturated.disc_out_b(0) = 1000.0;
  const double top = regress(fields, t, saturated, vocab).value;
  saturated.disc_out_b(0) = -1000.0;
  const double bottom = regress(fields, t, saturated, vocab).value;
  report("regression outputs stay within bounds", inside == 1000 && exact_ends == 1000 && top == 5.0 && bottom == 0.0,
         fmt(inside, "/1000 inside [V1, V2], ", exact_ends, "/1000 exact at P in {0, 1}, saturated outputs ", bottom,
             " and ", top));
}

void metrics() {
  // Definitional Matthews correlation for TP=3, FP=1, TN=4, FN=2.
  const double tp = 3, fp = 1, tn = 4, fn = 2;
  const double oracle = (tp * tn - fp * fn) / std::sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn));
  const MetricValue mcc = matthews(BinaryConfusion{3, 1, 4, 2});
  bool ok = std::abs(mcc.value - oracle) <= kMetricTol && std::abs(oracle - 0.4082) < 5e-5;

  Rng rng(7);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 10 + rng.index(90);
    std::vector<int> p(n), g(n);
    std::vector<double> x(n), y(n);
    double hits = 0, ctp = 0, cfp = 0, cfn = 0;
    double sx = 0, sy = 0;
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = static_cast<int>(rng.index(2));
      g[i] = static_cast<int>(rng.index(2));
      hits += p[i] == g[i];
      ctp += p[i] == 1 && g[i] == 1;
      cfp += p[i] == 1 && g[i] == 0;
      cfn += p[i] == 0 && g[i] == 1;
      x[i] = rng.normal();
      y[i] = 0.3 * x[i] + rng.normal();
      sx += x[i];
      sy += y[i];
    }
    const double mx = sx / static_cast<double>(n), my = sy / static_cast<double>(n);
    double cov = 0, vx = 0, vy = 0;
    for (std::size_t i = 0; i < n; ++i) {
      cov += (x[i] - mx) * (y[i] - my);
      vx += (x[i] - mx) * (x[i] - mx);
      vy += (y[i] - my) * (y[i] - my);
    }
    worst = std::max(worst, std::abs(pearson(x, y) - cov / std::sqrt(vx * vy)));
    worst = std::max(worst, std::abs(accuracy(p, g) - hits / static_cast<double>(n)));
    if (ctp > 0) {
      worst = std::max(worst, std::abs(f1_score(binary_confusion(p, g)).value - 2 * ctp / (2 * ctp + cfp + cfn)));
    }
  }
  ok = ok && worst <= kMetricTol;
  report("metrics match definitional references", ok,
         fmt("Matthews ", mcc.value, " vs oracle ", oracle, "; max Pearson/F1/accuracy difference ", worst));
}

// Class 0 draws its tokens from one half of the content vocabulary and
// class 1 from the other.
std::vector<LabeledExample> synthetic_task(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<LabeledExample> out;
  for (int i = 0; i < n; ++i) {
    const int label = static_cast<int>(rng.index(2));
    const int base = label ? 15 : 5;
    const std::size_t len = 3 + rng.index(5);
    std::string text;
    for (std::size_t w = 0; w < len; ++w) text += (w ? " w" : "w") + std::to_string(base + static_cast<int>(rng.index(10)));
    out.push_back({{{"input", text}}, label});
  }
  return out;
}

double accuracy_on(const std::vector<LabeledExample>& examples, const Template& t, const Parameters<float>& params,
                   const Vocab& vocab) {
  int hits = 0;
  for (const auto& ex : examples) {
    hits += classify(ex.fields, t, params, vocab, {0, DegeneratePolicy::clamp}).label == ex.label;
  }
  return static_cast<double>(hits) / static_cast<double>(examples.size());
}

void few_shot(const ToyModel& toy) {
  const Vocab vocab = toy_vocab(toy.config.vocab_size);
  Template t;
  t.name = "toy-2class";
  t.pattern = "{input} <SEP> w3 {label}";
  t.label_words = {"w0", "w1"};
  t.label_values = {"0", "1"};
  const auto pool = synthetic_task(400, 11);
  const auto held_out = synthetic_task(300, 12);
  const double zero_shot = accuracy_on(held_out, t, toy.discriminator, vocab);

  std::string detail = fmt("zero-shot ", zero_shot, "; fine-tuned");
  int improved = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    FinetuneOptions opts;
    opts.k_per_class = 16;
    opts.epochs = 10;
    opts.learning_rate = 1e-4;
    opts.seed = seed;
    const auto result = finetune_prompt(toy.discriminator, std::span<const LabeledExample>(pool), t, vocab, opts);
    const double acc = accuracy_on(held_out, t, result.discriminator, vocab);
    improved += acc > zero_shot;
    detail += fmt(" ", acc);
  }
  report("few-shot fine-tuning beats zero-shot (K=16, 5 seeds)", improved == 5, detail);
}

void format_round_trip(const ToyModel& toy) {
  const fs::path dir = fs::temp_directory_path() / "rtd_acceptance";
  fs::create_directories(dir);
  bool identity = true;
  for (const auto* params : {&toy.discriminator, &toy.generator}) {
    save_weights(to_container(*params), dir / "a.rtdw");
    const auto back = from_container<float>(load_weights(dir / "a.rtdw"));
    identity = identity && back.config == params->config && flatten(back) == flatten(*params);
  }
  save_weights(to_container(toy.discriminator), dir / "a.rtdw");
  save_weights(to_container(toy.discriminator), dir / "b.rtdw");
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  };
  const bool same_bytes = slurp(dir / "a.rtdw") == slurp(dir / "b.rtdw");
  fs::remove_all(dir);
  report("weight format round trip", identity && same_bytes,
         fmt("load(save(x)) == x: ", identity ? "yes" : "no", ", repeated saves byte-identical: ",
             same_bytes ? "yes" : "no"));
}

// ---------------------------------------------------------------------------
// Checkpoint-dependent criteria

fs::path env_path(const char* name) {
  const char* v = std::getenv(name);
  return v && *v ? fs::path(v) : fs::path();
}

void forward_parity() {
  const fs::path dir = env_path("RTD_MODEL_DIR");
  const fs::path weights = dir / "model.rtdw", inputs = dir / "parity_inputs.txt", csv = dir / "parity.csv";
  const std::string name = "[secondary] forward parity with exported weights";
  if (dir.empty() || !fs::exists(weights) || !fs::exists(inputs) || !fs::exists(csv)) {
    skip(name, "set RTD_MODEL_DIR to a directory with model.rtdw, parity_inputs.txt and parity.csv");
    return;
  }
  const auto params = from_container<float>(load_weights(weights));
  const double diff = parity_max_abs_diff(params, load_parity_inputs(inputs), load_parity_reference(csv));
  report(name, diff <= kParityTol, fmt("max abs diff ", diff), false);
}

struct PublishedTarget {
  int hidden;
  const char* size;
  double accuracy;  // percent
  double tolerance;
};

void zero_shot_reproduction() {
  const fs::path model_dir = env_path("RTD_MODEL_DIR");
  const fs::path data_dir = env_path("RTD_DATA_DIR");
  const std::string name = "[secondary] SST-2 zero-shot accuracy";
  const fs::path dev = data_dir / "sst2" / "dev.tsv";
  if (model_dir.empty() || data_dir.empty() || !fs::exists(model_dir / "model.rtdw") || !fs::exists(dev)) {
    skip(name, "set RTD_MODEL_DIR (model.rtdw, vocab.txt) and RTD_DATA_DIR (sst2/dev.tsv)");
    return;
  }
  const Vocab vocab = load_vocab(model_dir / "vocab.txt");
  const auto params = from_container<float>(load_weights(model_dir / "model.rtdw"));
  const PublishedTarget targets[] = {{256, "small", 66.7, 2.0}, {768, "base", 81.0, 2.0}, {1024, "large", 90.1, 1.5}};
  const PublishedTarget* target = nullptr;
  for (const auto& t : targets) {
    if (t.hidden == params.config.hidden) target = &t;
  }
  if (!target) {
    skip(name, fmt("no reference accuracy for hidden size ", params.config.hidden));
    return;
  }
  const Dataset data = load_dataset(dev, DataFormat::tsv, builtin_schema("sst2"), "sst2");
  EvalOptions opts;
  opts.policy = DegeneratePolicy::clamp;
  const EvalReport r = run_eval(data, builtin_template("sst2"), params, vocab, opts);
  const double acc = 100.0 * r.metrics[0].value;
  report(name, std::abs(acc - target->accuracy) <= target->tolerance,
         fmt(target->size, ": ", acc, " vs ", target->accuracy, " +/- ", target->tolerance), false);
}

void stsb_sanity() {
  const fs::path model_dir = env_path("RTD_MODEL_DIR");
  const fs::path data_dir = env_path("RTD_DATA_DIR");
  const std::string name = "[secondary] STS-B regression sanity";
  const fs::path dev = data_dir / "stsb" / "dev.tsv";
  if (model_dir.empty() || data_dir.empty() || !fs::exists(model_dir / "model.rtdw") || !fs::exists(dev)) {
    skip(name, "set RTD_MODEL_DIR (large model.rtdw, vocab.txt) and RTD_DATA_DIR (stsb/dev.tsv)");
    return;
  }
  const Vocab vocab = load_vocab(model_dir / "vocab.txt");
  const auto params = from_container<float>(load_weights(model_dir / "model.rtdw"));
  if (params.config.hidden != 1024) {
    skip(name, "reference value is for the large model");
    return;
  }
  const Dataset data = load_dataset(dev, DataFormat::tsv, builtin_schema("stsb"), "stsb");
  const EvalReport r = run_eval(data, builtin_template("stsb"), params, vocab, {});
  const double value = 100.0 * r.metrics[0].value;
  report(name, value > 0.0 && std::abs(value - 14.6) <= 8.0, fmt("Pearson ", value, " vs 14.6 +/- 8"), false);
}

}  // namespace

int main() {
  try {
    normalization();
    argmax_invariance();
    gradients();
    const ToyModel toy = toy_pretraining();
    sampled_equal_rule();
    pipeline_oracle();
    regression_bounds();
    metrics();
    few_shot(toy);
    format_round_trip(toy);
    forward_parity();
    zero_shot_reproduction();
    stsb_sanity();
  } catch (const std::exception& e) {
    std::cout << "FAIL  acceptance suite aborted: " << e.what() << std::endl;
    return 1;
  }
  std::cout << (primary_failures ? "acceptance: FAILED" : "acceptance: all primary criteria passed") << std::endl;
  return primary_failures ? 1 : 0;
}
