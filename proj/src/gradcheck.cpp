#include "deblur_lab/gradcheck.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <map>

#include "deblur_lab/errors.hpp"
#include "deblur_lab/loss.hpp"
#include "deblur_lab/model.hpp"
#include "deblur_lab/ops.hpp"
#include "deblur_lab/rng.hpp"

namespace deblur {

bool GradcheckReport::passed() const {
  return !results.empty() && std::all_of(results.begin(), results.end(), [](const auto& r) { return r.passed; });
}

namespace {

struct Probe {
  std::size_t input;
  std::size_t entry;
};

double rel_error(double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6}); }

GradcheckResult probe_all(const std::string& name, const std::string& group, const ScalarFn& fn,
                          std::vector<Tensor> inputs, const std::vector<Probe>& probes, double eps,
                          double tolerance) {
  for (auto& t : inputs) {
    if (!t.is_leaf() || !t.requires_grad()) throw StateError("gradcheck inputs must be leaves that require grad");
    t.zero_grad();
  }
  const Tensor loss = fn(inputs);
  if (loss.numel() != 1) throw DimensionError("gradcheck function must return a scalar");
  backward(loss);

  GradcheckResult r;
  r.name = name;
  r.group = group;
  r.tolerance = tolerance;
  NoGradGuard no_grad;
  for (const auto& p : probes) {
    Tensor& t = inputs[p.input];
    const double analytic = t.has_grad() ? t.grad()[p.entry] : 0.0;
    auto vals = t.mutable_values();
    const double saved = vals[p.entry];
    vals[p.entry] = saved + eps;
    const double fp = fn(inputs).item();
    vals[p.entry] = saved - eps;
    const double fm = fn(inputs).item();
    vals[p.entry] = saved;
    const double numeric = (fp - fm) / (2.0 * eps);
    r.max_rel_error = std::max(r.max_rel_error, rel_error(analytic, numeric));
    if (!std::isfinite(analytic) || !std::isfinite(numeric)) r.max_rel_error = INFINITY;
    ++r.probes;
  }
  r.passed = r.max_rel_error <= tolerance;
  return r;
}

// `count` distinct entries of [0, n), or all of them when n <= count.
std::vector<std::size_t> pick(std::size_t n, std::size_t count, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  if (n <= count) return idx;
  for (std::size_t i = 0; i < count; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  idx.resize(count);
  return idx;
}

Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_values(shape, std::move(v), true);
}

// Values with |x| >= 0.1 so kinks (relu, abs) are never straddled by +-eps.
Tensor off_kink_tensor(const Shape& shape, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) {
    const double m = rng.uniform(0.1, 1.0);
    x = rng.uniform() < 0.5 ? -m : m;
  }
  return Tensor::from_values(shape, std::move(v), true);
}

// Scalarizes a tensor-valued op with a fixed random projection.
ScalarFn projected(std::function<Tensor(const std::vector<Tensor>&)> op, std::uint64_t seed) {
  auto weights = std::make_shared<Tensor>();
  return [op = std::move(op), weights, seed](const std::vector<Tensor>& in) {
    Tensor out = op(in);
    if (!weights->defined() || weights->shape() != out.shape()) {
      Rng rng(seed);
      std::vector<double> w(out.numel());
      for (auto& x : w) x = rng.uniform(-1.0, 1.0);
      *weights = Tensor::from_values(out.shape(), std::move(w));
    }
    return sum(mul(out, *weights));
  };
}

ConvSpec conv(int k, int stride, Padding pad, int cin, int cout) {
  ConvSpec s;
  s.kernel_height = k;
  s.kernel_width = k;
  s.stride = stride;
  s.padding = pad;
  s.in_channels = cin;
  s.out_channels = cout;
  return s;
}

struct OpCase {
  std::string name;
  std::function<Tensor(const std::vector<Tensor>&)> op;
  std::vector<Tensor> inputs;
  bool scalar_output = false;
};

std::vector<OpCase> op_cases(Rng& rng) {
  std::vector<OpCase> cases;
  auto add_case = [&](std::string name, std::vector<Tensor> inputs, std::function<Tensor(const std::vector<Tensor>&)> op,
                      bool scalar = false) { cases.push_back({std::move(name), std::move(op), std::move(inputs), scalar}); };

  for (auto [label, k, s, pad] : {std::tuple{"conv2d_same_s1", 3, 1, Padding::kSame},
                                  std::tuple{"conv2d_same_s2", 3, 2, Padding::kSame},
                                  std::tuple{"conv2d_valid_s1", 3, 1, Padding::kValid},
                                  std::tuple{"conv2d_same_k5_s2", 5, 2, Padding::kSame}}) {
    const ConvSpec spec = conv(k, s, pad, 2, 3);
    add_case(label, {random_tensor({7, 6, 2}, rng), random_tensor({Shape::value_type(k), Shape::value_type(k), 2, 3}, rng), random_tensor({3}, rng)},
             [spec](const auto& in) { return conv2d(in[0], in[1], in[2], spec); });
  }
  for (auto [label, k, s, pad] : {std::tuple{"conv2d_transpose_same_s2", 3, 2, Padding::kSame},
                                  std::tuple{"conv2d_transpose_same_s1", 3, 1, Padding::kSame},
                                  std::tuple{"conv2d_transpose_valid_s2", 3, 2, Padding::kValid}}) {
    const ConvSpec spec = conv(k, s, pad, 3, 2);
    add_case(label, {random_tensor({4, 5, 3}, rng), random_tensor({Shape::value_type(k), Shape::value_type(k), 2, 3}, rng), random_tensor({2}, rng)},
             [spec](const auto& in) { return conv2d_transpose(in[0], in[1], in[2], spec); });
  }
  {
    std::vector<double> window(9);
    for (auto& w : window) w = rng.uniform(0.0, 1.0);
    add_case("filter2d_valid", {random_tensor({6, 5, 2}, rng)},
             [window](const auto& in) { return filter2d_valid(in[0], window, 3, 3); });
  }
  add_case("relu", {off_kink_tensor({4, 5}, rng)}, [](const auto& in) { return relu(in[0]); });
  add_case("sigmoid", {random_tensor({4, 5}, rng, -3, 3)}, [](const auto& in) { return sigmoid(in[0]); });
  add_case("gelu", {random_tensor({4, 5}, rng, -3, 3)}, [](const auto& in) { return gelu(in[0]); });
  add_case("abs", {off_kink_tensor({4, 5}, rng)}, [](const auto& in) { return abs(in[0]); });
  add_case("square", {random_tensor({4, 5}, rng)}, [](const auto& in) { return square(in[0]); });
  add_case("add", {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)}, [](const auto& in) { return add(in[0], in[1]); });
  add_case("add_scalar_broadcast", {random_tensor({3, 4}, rng), random_tensor({1}, rng)},
           [](const auto& in) { return add(in[0], in[1]); });
  add_case("sub", {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)}, [](const auto& in) { return sub(in[0], in[1]); });
  add_case("mul", {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)}, [](const auto& in) { return mul(in[0], in[1]); });
  add_case("div", {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng, 0.5, 2.0)},
           [](const auto& in) { return div(in[0], in[1]); });
  add_case("div_scalar_broadcast", {random_tensor({1}, rng, 0.5, 2.0), random_tensor({3, 4}, rng, 0.5, 2.0)},
           [](const auto& in) { return div(in[0], in[1]); });
  add_case("scale", {random_tensor({3, 4}, rng)}, [](const auto& in) { return scale(in[0], -1.7); });
  add_case("add_scalar", {random_tensor({3, 4}, rng)}, [](const auto& in) { return add_scalar(in[0], 0.3); });
  add_case("add_bias", {random_tensor({3, 4}, rng), random_tensor({4}, rng)},
           [](const auto& in) { return add_bias(in[0], in[1]); });
  add_case("sum", {random_tensor({3, 4}, rng)}, [](const auto& in) { return sum(in[0]); }, true);
  add_case("mean", {random_tensor({3, 4}, rng)}, [](const auto& in) { return mean(in[0]); }, true);
  add_case("concat_last", {random_tensor({3, 2, 2}, rng), random_tensor({3, 2, 3}, rng)},
           [](const auto& in) { return concat_last({in[0], in[1]}); });
  add_case("layer_norm", {random_tensor({4, 6}, rng), random_tensor({6}, rng), random_tensor({6}, rng)},
           [](const auto& in) { return layer_norm(in[0], in[1], in[2]); });
  add_case("dropout_train", {random_tensor({4, 6}, rng)}, [](const auto& in) { return dropout(in[0], 0.3, 99, true); });
  add_case("matmul", {random_tensor({3, 4}, rng), random_tensor({4, 5}, rng)},
           [](const auto& in) { return matmul(in[0], in[1]); });
  add_case("transpose2d", {random_tensor({3, 4}, rng)}, [](const auto& in) { return transpose2d(in[0]); });
  add_case("linear", {random_tensor({3, 4}, rng), random_tensor({4, 5}, rng), random_tensor({5}, rng)},
           [](const auto& in) { return linear(in[0], in[1], in[2]); });
  add_case("softmax_rows", {random_tensor({3, 5}, rng, -2, 2)}, [](const auto& in) { return softmax_rows(in[0]); });
  add_case("gather", {random_tensor({6}, rng)},
           [](const auto& in) { return gather(in[0], {5, 0, 0, 3, 2}, {5}); });
  add_case("reshape", {random_tensor({3, 4}, rng)}, [](const auto& in) { return reshape(in[0], {2, 6}); });
  add_case("slice_cols", {random_tensor({3, 6}, rng)}, [](const auto& in) { return slice_cols(in[0], 1, 4); });
  add_case("patchify", {random_tensor({4, 6, 2}, rng)}, [](const auto& in) { return patchify(in[0], 2); });
  add_case("unpatchify", {random_tensor({6, 8}, rng)}, [](const auto& in) { return unpatchify(in[0], 2, 3, 2, 2); });
  {
    AttentionSpec spec;
    spec.embed_dim = 8;
    spec.num_heads = 2;
    spec.dropout_rate = 0.2;
    std::vector<Tensor> in{random_tensor({5, 8}, rng)};
    for (int i = 0; i < 4; ++i) {
      in.push_back(random_tensor({8, 8}, rng, -0.5, 0.5));
      in.push_back(random_tensor({8}, rng, -0.1, 0.1));
    }
    add_case("multi_head_attention", std::move(in), [spec](const auto& in) {
      AttentionParams p{in[1], in[2], in[3], in[4], in[5], in[6], in[7], in[8]};
      AttentionOptions opt;
      opt.training = true;
      opt.dropout_seed = 7;
      return multi_head_attention(in[0], spec, p, opt);
    });
  }
  // Loss functions: predictions in (0,1) and a fixed target.
  {
    Rng trng(rng.next_u64());
    Image target(16, 16, 3);
    for (auto& v : target.data) v = trng.uniform();
    const Tensor target_t = to_tensor(target);
    auto pred = [&] { return random_tensor({16, 16, 3}, rng, 0.05, 0.95); };
    add_case("mse_loss", {pred()}, [target_t](const auto& in) { return mse_loss(in[0], target_t); }, true);
    add_case("mae_loss", {pred()}, [target_t](const auto& in) { return mae_loss(in[0], target_t); }, true);
    add_case("ssim_value", {pred()}, [target_t](const auto& in) { return ssim_value(in[0], target_t); }, true);
    auto extractor = std::make_shared<PerceptualExtractor>();
    add_case("perceptual_loss", {pred()},
             [target, extractor](const auto& in) { return perceptual_loss(in[0], target, *extractor); }, true);
    add_case("composite_loss", {pred()},
             [target, extractor](const auto& in) { return composite_loss(in[0], target, LossWeights{}, *extractor); },
             true);
  }
  return cases;
}

// Layer family of a parameter name: digits and the trailing leaf dropped,
// e.g. "vit0.attn.wq" -> "vit.attn", "enc_conv3.w" -> "enc_conv".
std::string family_of(const std::string& name) {
  std::string base = name.substr(0, name.rfind('.'));
  if (base == "pos_embed" || name.find('.') == std::string::npos) base = name;
  std::string out;
  for (char c : base)
    if (!std::isdigit(static_cast<unsigned char>(c))) out += c;
  return out;
}

void check_model(const GradcheckOptions& options, GradcheckReport& report) {
  const ModelConfig config = ModelConfig::reduced(options.model_img);
  const ModelParams params = build_model(config);
  Rng rng(derive_seed(options.seed, 2));
  Image input(config.img_size[0], config.img_size[1], 3), target(config.img_size[0], config.img_size[1], 3);
  for (auto& v : input.data) v = rng.uniform();
  for (auto& v : target.data) v = rng.uniform();
  const Tensor input_t = to_tensor(input);
  auto extractor = std::make_shared<PerceptualExtractor>();

  const ScalarFn fn = [&](const std::vector<Tensor>&) {
    ForwardOptions fo;
    fo.mode = ForwardMode::kTrain;
    fo.dropout_seed = 3;
    return composite_loss(forward(params, config, input_t, fo), target, LossWeights{}, *extractor);
  };

  std::vector<Tensor> tensors = params.tensors();
  std::map<std::string, std::vector<std::size_t>> families;
  std::vector<std::string> order;
  for (std::size_t i = 0; i < params.entries().size(); ++i) {
    const auto fam = family_of(params.entries()[i].first);
    if (!families.count(fam)) order.push_back(fam);
    families[fam].push_back(i);
  }
  // One backward pass shared by all families: probe them jointly, report per family.
  std::vector<std::pair<std::string, std::vector<Probe>>> plan;
  for (const auto& fam : order) {
    std::vector<Probe> all;
    for (auto ti : families[fam])
      for (std::size_t e = 0; e < tensors[ti].numel(); ++e) all.push_back({ti, e});
    std::vector<Probe> chosen;
    for (auto k : pick(all.size(), options.probes, rng)) chosen.push_back(all[k]);
    plan.emplace_back(fam, std::move(chosen));
  }
  for (const auto& [fam, probes] : plan) {
    auto r = probe_all("model:" + fam, "model", fn, tensors, probes, options.eps, options.model_tolerance);
    report.max_model_error = std::max(report.max_model_error, r.max_rel_error);
    report.results.push_back(std::move(r));
  }
}

}  // namespace

GradcheckResult check_gradient(const std::string& name, const ScalarFn& fn, const std::vector<Tensor>& inputs,
                               const GradcheckOptions& options, double tolerance) {
  Rng rng(options.seed);
  std::vector<Probe> probes;
  for (std::size_t i = 0; i < inputs.size(); ++i)
    for (auto e : pick(inputs[i].numel(), options.probes, rng)) probes.push_back({i, e});
  return probe_all(name, "op", fn, inputs, probes, options.eps, tolerance);
}

GradcheckReport run_gradcheck_suite(const GradcheckOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  GradcheckReport report;
  Rng rng(options.seed);
  std::uint64_t proj_seed = derive_seed(options.seed, 1);
  for (auto& c : op_cases(rng)) {
    const ScalarFn fn = c.scalar_output ? ScalarFn(c.op) : projected(c.op, proj_seed++);
    auto r = check_gradient(c.name, fn, c.inputs, options, options.op_tolerance);
    report.max_op_error = std::max(report.max_op_error, r.max_rel_error);
    report.results.push_back(std::move(r));
  }
  if (options.include_model) check_model(options, report);
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace deblur
