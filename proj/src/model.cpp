#include "unitscope/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

#include "json.hpp"
#include "unitscope/common.hpp"
#include "unitscope/fsio.hpp"
#include "unitscope/hashing.hpp"

namespace unitscope {

using nlohmann::json;

std::string to_string(ArchitectureTag tag) {
  switch (tag) {
    case ArchitectureTag::Conv: return "conv";
    case ArchitectureTag::Transformer: return "transformer";
    case ArchitectureTag::Synthetic: return "synthetic";
  }
  return "?";
}

std::string to_string(LayerKind kind) {
  return kind == LayerKind::ConvFeatureMap ? "conv-feature-map" : "mlp-hidden";
}

namespace detail {

enum class OpKind {
  Conv2d,
  MaxPool2d,
  Relu,
  Gelu,
  Add,
  GlobalMaxPool,
  GlobalAvgPool,
  Flatten,
  Linear,
  LayerNorm,
  Attention,
  ToTokens,
  PrependToken,
  AddParam,
  SelectToken,
};

struct Op {
  OpKind kind;
  std::string name;
  std::vector<int> inputs;  // slot indices; slot 0 is the graph input
  std::string weight, bias;
  std::string gamma, beta;
  std::string wq, bq, wk, bk, wv, bv, wo, bo;
  std::string param;
  int stride = 1;
  int padding = 0;
  int kernel = 0;
  int heads = 1;
  int token = 0;
  double eps = 1e-5;
};

struct CatalogEntry {
  std::string layer;
  LayerKind kind = LayerKind::ConvFeatureMap;
  int producer_op = -1;  // op whose parameters define the units
  int post_slot = -1;    // activation after the nonlinearity
  int pre_slot = -1;
  int units = 0;
};

struct Graph {
  std::string name;
  std::vector<int> input_shape;  // C,H,W
  std::vector<Op> ops;
  std::map<std::string, Tensor> params;
  int output_slot = -1;
  std::vector<CatalogEntry> catalog;
  std::string head_op;
  std::string head_feature_layer;
  std::map<std::string, std::string> aliases;

  const Tensor& param(const std::string& key) const {
    auto it = params.find(key);
    if (it == params.end()) throw Error("missing tensor: " + key);
    return it->second;
  }
  Tensor& param(const std::string& key) {
    auto it = params.find(key);
    if (it == params.end()) throw Error("missing tensor: " + key);
    return it->second;
  }

  std::vector<Tensor> forward(const Tensor& input) const;
};

namespace {

float gelu(float x) { return 0.5f * x * (1.0f + std::erf(x / std::sqrt(2.0f))); }

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  const int ci = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const int k = w.dim(0), cw = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  if (cw != ci) throw Error("conv2d channel mismatch");
  const int ho = (h + 2 * pad - kh) / stride + 1;
  const int wo = (wd + 2 * pad - kw) / stride + 1;
  if (ho <= 0 || wo <= 0) throw Error("conv2d output would be empty");
  Tensor y({k, ho, wo});
  for (int oc = 0; oc < k; ++oc) {
    for (int orr = 0; orr < ho; ++orr) {
      for (int occ = 0; occ < wo; ++occ) {
        float acc = b.data.empty() ? 0.0f : b(oc);
        const int r0 = orr * stride - pad;
        const int c0 = occ * stride - pad;
        for (int ic = 0; ic < ci; ++ic) {
          for (int i = 0; i < kh; ++i) {
            const int r = r0 + i;
            if (r < 0 || r >= h) continue;
            for (int j = 0; j < kw; ++j) {
              const int c = c0 + j;
              if (c < 0 || c >= wd) continue;
              acc += w(oc, ic, i, j) * x(ic, r, c);
            }
          }
        }
        y(oc, orr, occ) = acc;
      }
    }
  }
  return y;
}

Tensor maxpool2d(const Tensor& x, int k, int stride, int pad) {
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int ho = (h + 2 * pad - k) / stride + 1;
  const int wo = (w + 2 * pad - k) / stride + 1;
  Tensor y({c, ho, wo});
  for (int ch = 0; ch < c; ++ch)
    for (int orr = 0; orr < ho; ++orr)
      for (int occ = 0; occ < wo; ++occ) {
        float best = -std::numeric_limits<float>::infinity();
        for (int i = 0; i < k; ++i)
          for (int j = 0; j < k; ++j) {
            const int r = orr * stride - pad + i;
            const int cc = occ * stride - pad + j;
            if (r < 0 || r >= h || cc < 0 || cc >= w) continue;
            best = std::max(best, x(ch, r, cc));
          }
        y(ch, orr, occ) = best;
      }
  return y;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  const int units = w.dim(0), in = w.dim(1);
  if (x.rank() == 1) {
    if (x.dim(0) != in) throw Error("linear input width mismatch");
    Tensor y({units});
    for (int u = 0; u < units; ++u) {
      float acc = b.data.empty() ? 0.0f : b(u);
      for (int d = 0; d < in; ++d) acc += w(u, d) * x(d);
      y(u) = acc;
    }
    return y;
  }
  if (x.rank() == 2) {
    if (x.dim(1) != in) throw Error("linear token width mismatch");
    const int t = x.dim(0);
    Tensor y({t, units});
    for (int row = 0; row < t; ++row)
      for (int u = 0; u < units; ++u) {
        float acc = b.data.empty() ? 0.0f : b(u);
        for (int d = 0; d < in; ++d) acc += w(u, d) * x(row, d);
        y(row, u) = acc;
      }
    return y;
  }
  throw Error("linear expects rank 1 or 2 input");
}

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.rank() != 2) throw Error("layernorm expects (T,D) input");
  const int t = x.dim(0), d = x.dim(1);
  Tensor y({t, d});
  for (int row = 0; row < t; ++row) {
    double mean = 0.0;
    for (int i = 0; i < d; ++i) mean += x(row, i);
    mean /= d;
    double var = 0.0;
    for (int i = 0; i < d; ++i) {
      const double dv = x(row, i) - mean;
      var += dv * dv;
    }
    var /= d;
    const double inv = 1.0 / std::sqrt(var + eps);
    for (int i = 0; i < d; ++i)
      y(row, i) = static_cast<float>((x(row, i) - mean) * inv) * gamma(i) + beta(i);
  }
  return y;
}

void softmax_rows(std::vector<double>& m, int rows, int cols) {
  for (int r = 0; r < rows; ++r) {
    double* row = m.data() + static_cast<size_t>(r) * cols;
    double mx = row[0];
    for (int c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
    double sum = 0.0;
    for (int c = 0; c < cols; ++c) {
      row[c] = std::exp(row[c] - mx);
      sum += row[c];
    }
    for (int c = 0; c < cols; ++c) row[c] /= sum;
  }
}

Tensor attention(const Tensor& x, const Graph& g, const Op& op) {
  if (x.rank() != 2) throw Error("attention expects (T,D) input");
  const int t = x.dim(0), d = x.dim(1);
  const int h = op.heads;
  if (d % h != 0) throw Error("attention width not divisible by head count");
  const int dh = d / h;
  const Tensor q = linear(x, g.param(op.wq), g.param(op.bq));
  const Tensor k = linear(x, g.param(op.wk), g.param(op.bk));
  const Tensor v = linear(x, g.param(op.wv), g.param(op.bv));
  Tensor ctx({t, d});
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<double> scores(static_cast<size_t>(t) * t);
  for (int head = 0; head < h; ++head) {
    const int off = head * dh;
    for (int i = 0; i < t; ++i)
      for (int j = 0; j < t; ++j) {
        double acc = 0.0;
        for (int e = 0; e < dh; ++e) acc += q(i, off + e) * k(j, off + e);
        scores[static_cast<size_t>(i) * t + j] = acc * scale;
      }
    softmax_rows(scores, t, t);
    for (int i = 0; i < t; ++i)
      for (int e = 0; e < dh; ++e) {
        double acc = 0.0;
        for (int j = 0; j < t; ++j)
          acc += scores[static_cast<size_t>(i) * t + j] * v(j, off + e);
        ctx(i, off + e) = static_cast<float>(acc);
      }
  }
  return linear(ctx, g.param(op.wo), g.param(op.bo));
}

}  // namespace

std::vector<Tensor> Graph::forward(const Tensor& input) const {
  std::vector<Tensor> slots;
  slots.reserve(ops.size() + 1);
  slots.push_back(input);
  for (const Op& op : ops) {
    const Tensor& a = slots[static_cast<size_t>(op.inputs[0])];
    switch (op.kind) {
      case OpKind::Conv2d: {
        const Tensor& b = param(op.bias);
        slots.push_back(conv2d(a, param(op.weight), b, op.stride, op.padding));
        break;
      }
      case OpKind::MaxPool2d:
        slots.push_back(maxpool2d(a, op.kernel, op.stride, op.padding));
        break;
      case OpKind::Relu: {
        Tensor y = a;
        for (auto& v : y.data) v = std::max(v, 0.0f);
        slots.push_back(std::move(y));
        break;
      }
      case OpKind::Gelu: {
        Tensor y = a;
        for (auto& v : y.data) v = gelu(v);
        slots.push_back(std::move(y));
        break;
      }
      case OpKind::Add: {
        const Tensor& b = slots[static_cast<size_t>(op.inputs[1])];
        if (!a.same_shape(b)) throw Error("add shape mismatch in op " + op.name);
        Tensor y = a;
        for (size_t i = 0; i < y.data.size(); ++i) y.data[i] += b.data[i];
        slots.push_back(std::move(y));
        break;
      }
      case OpKind::GlobalMaxPool: {
        if (a.rank() != 3) throw Error("global_max_pool expects (C,H,W)");
        Tensor y({a.dim(0)});
        const int hw = a.dim(1) * a.dim(2);
        for (int c = 0; c < a.dim(0); ++c) {
          float best = a.data[static_cast<size_t>(c) * hw];
          for (int p = 1; p < hw; ++p)
            best = std::max(best, a.data[static_cast<size_t>(c) * hw + p]);
          y(c) = best;
        }
        slots.push_back(std::move(y));
        break;
      }
      case OpKind::GlobalAvgPool: {
        if (a.rank() != 3) throw Error("global_avg_pool expects (C,H,W)");
        Tensor y({a.dim(0)});
        const int hw = a.dim(1) * a.dim(2);
        for (int c = 0; c < a.dim(0); ++c) {
          double acc = 0.0;
          for (int p = 0; p < hw; ++p) acc += a.data[static_cast<size_t>(c) * hw + p];
          y(c) = static_cast<float>(acc / hw);
        }
        slots.push_back(std::move(y));
        break;
      }
      case OpKind::Flatten: {
        Tensor y = a;
        y.shape = {static_cast<int>(a.numel())};
        slots.push_back(std::move(y));
        break;
      }
      case OpKind::Linear:
        slots.push_back(linear(a, param(op.weight), param(op.bias)));
        break;
      case OpKind::LayerNorm:
        slots.push_back(layernorm(a, param(op.gamma), param(op.beta), op.eps));
        break;
      case OpKind::Attention:
        slots.push_back(attention(a, *this, op));
        break;
      case OpKind::ToTokens: {
        if (a.rank() != 3) throw Error("to_tokens expects (C,H,W)");
        const int c = a.dim(0), h = a.dim(1), w = a.dim(2);
        Tensor y({h * w, c});
        for (int r = 0; r < h; ++r)
          for (int cc = 0; cc < w; ++cc)
            for (int ch = 0; ch < c; ++ch) y(r * w + cc, ch) = a(ch, r, cc);
        slots.push_back(std::move(y));
        break;
      }
      case OpKind::PrependToken: {
        const Tensor& p = param(op.param);
        if (a.rank() != 2 || p.numel() != a.dim(1))
          throw Error("prepend_token shape mismatch");
        Tensor y({a.dim(0) + 1, a.dim(1)});
        for (int i = 0; i < a.dim(1); ++i) y(0, i) = p.data[static_cast<size_t>(i)];
        for (int r = 0; r < a.dim(0); ++r)
          for (int i = 0; i < a.dim(1); ++i) y(r + 1, i) = a(r, i);
        slots.push_back(std::move(y));
        break;
      }
      case OpKind::AddParam: {
        const Tensor& p = param(op.param);
        if (p.numel() != a.numel()) throw Error("add_param shape mismatch");
        Tensor y = a;
        for (size_t i = 0; i < y.data.size(); ++i) y.data[i] += p.data[i];
        slots.push_back(std::move(y));
        break;
      }
      case OpKind::SelectToken: {
        if (a.rank() != 2 || op.token < 0 || op.token >= a.dim(0))
          throw Error("select_token out of range");
        Tensor y({a.dim(1)});
        for (int i = 0; i < a.dim(1); ++i) y(i) = a(op.token, i);
        slots.push_back(std::move(y));
        break;
      }
    }
  }
  return slots;
}

}  // namespace detail

namespace {

using detail::Graph;
using detail::Op;
using detail::OpKind;

OpKind parse_op_kind(const std::string& s) {
  if (s == "conv2d") return OpKind::Conv2d;
  if (s == "maxpool2d") return OpKind::MaxPool2d;
  if (s == "relu") return OpKind::Relu;
  if (s == "gelu") return OpKind::Gelu;
  if (s == "add") return OpKind::Add;
  if (s == "global_max_pool") return OpKind::GlobalMaxPool;
  if (s == "global_avg_pool") return OpKind::GlobalAvgPool;
  if (s == "flatten") return OpKind::Flatten;
  if (s == "linear") return OpKind::Linear;
  if (s == "layernorm") return OpKind::LayerNorm;
  if (s == "attention") return OpKind::Attention;
  if (s == "to_tokens") return OpKind::ToTokens;
  if (s == "prepend_token") return OpKind::PrependToken;
  if (s == "add_param") return OpKind::AddParam;
  if (s == "select_token") return OpKind::SelectToken;
  throw Error("unknown op kind: " + s);
}

Tensor parse_tensor(const json& j, const std::string& key, const std::string& bin) {
  std::vector<int> shape = j.at("shape").get<std::vector<int>>();
  Tensor t(shape);
  if (j.contains("data")) {
    const auto& arr = j.at("data");
    if (static_cast<int64_t>(arr.size()) != t.numel())
      throw Error("tensor " + key + " data length does not match shape");
    for (size_t i = 0; i < arr.size(); ++i) t.data[i] = arr[i].get<float>();
  } else if (j.contains("offset")) {
    const size_t offset = j.at("offset").get<size_t>();
    const size_t bytes = static_cast<size_t>(t.numel()) * sizeof(float);
    if (bin.empty()) throw Error("tensor " + key + " references missing binary blob");
    if (offset + bytes > bin.size())
      throw Error("tensor " + key + " offset out of range in binary blob");
    std::memcpy(t.data.data(), bin.data() + offset, bytes);
  } else {
    throw Error("tensor " + key + " has neither data nor offset");
  }
  return t;
}

std::unique_ptr<Graph> parse_weights(const std::string& text,
                                     const std::filesystem::path& dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw Error(std::string("unreadable weights file: ") + e.what());
  }
  if (j.value("schema_version", 0) != 1)
    throw Error("unsupported weights schema_version");
  auto g = std::make_unique<Graph>();
  g->name = j.value("name", "");
  g->input_shape = j.at("input").at("shape").get<std::vector<int>>();
  if (g->input_shape.size() != 3) throw Error("weights input shape must be (C,H,W)");

  std::string bin;
  if (j.contains("binary") && !j.at("binary").is_null())
    bin = read_file(dir / j.at("binary").get<std::string>());
  for (auto& [key, tj] : j.at("tensors").items())
    g->params.emplace(key, parse_tensor(tj, key, bin));

  std::map<std::string, int> slot_of;
  slot_of["input"] = 0;
  for (const auto& oj : j.at("ops")) {
    Op op;
    op.name = oj.at("name").get<std::string>();
    if (slot_of.count(op.name)) throw Error("duplicate op name: " + op.name);
    op.kind = parse_op_kind(oj.at("op").get<std::string>());
    std::vector<std::string> ins;
    if (oj.at("in").is_string())
      ins.push_back(oj.at("in").get<std::string>());
    else
      ins = oj.at("in").get<std::vector<std::string>>();
    for (const auto& name : ins) {
      auto it = slot_of.find(name);
      if (it == slot_of.end())
        throw Error("op " + op.name + " reads undefined tensor " + name);
      op.inputs.push_back(it->second);
    }
    op.weight = oj.value("weight", "");
    op.bias = oj.value("bias", "");
    op.gamma = oj.value("gamma", "");
    op.beta = oj.value("beta", "");
    op.wq = oj.value("wq", "");
    op.bq = oj.value("bq", "");
    op.wk = oj.value("wk", "");
    op.bk = oj.value("bk", "");
    op.wv = oj.value("wv", "");
    op.bv = oj.value("bv", "");
    op.wo = oj.value("wo", "");
    op.bo = oj.value("bo", "");
    op.param = oj.value("param", "");
    op.stride = oj.value("stride", 1);
    op.padding = oj.value("padding", 0);
    op.kernel = oj.value("kernel", 0);
    op.heads = oj.value("heads", 1);
    op.token = oj.value("token", 0);
    op.eps = oj.value("eps", 1e-5);
    g->ops.push_back(op);
    slot_of[op.name] = static_cast<int>(g->ops.size());
  }

  const std::string out_name = j.at("output").get<std::string>();
  if (!slot_of.count(out_name)) throw Error("output op not found: " + out_name);
  g->output_slot = slot_of[out_name];

  for (const auto& cj : j.at("catalog")) {
    detail::CatalogEntry e;
    e.layer = cj.at("layer").get<std::string>();
    const std::string kind = cj.at("kind").get<std::string>();
    if (kind == "conv-feature-map")
      e.kind = LayerKind::ConvFeatureMap;
    else if (kind == "mlp-hidden")
      e.kind = LayerKind::MlpHidden;
    else
      throw Error("unknown catalog layer kind: " + kind);
    const std::string producer = cj.at("producer").get<std::string>();
    const std::string post = cj.value("post", producer);
    if (!slot_of.count(producer) || !slot_of.count(post))
      throw Error("catalog entry references unknown op: " + e.layer);
    e.producer_op = slot_of[producer] - 1;
    e.pre_slot = slot_of[producer];
    e.post_slot = slot_of[post];
    const Op& prod = g->ops[static_cast<size_t>(e.producer_op)];
    if (prod.kind != OpKind::Conv2d && prod.kind != OpKind::Linear)
      throw Error("catalog producer must be conv2d or linear: " + e.layer);
    e.units = g->param(prod.weight).dim(0);
    // Ablation zeroes producer weights; the recorded activation must then be
    // the nonlinearity at 0. Only identity/relu/gelu chains qualify.
    if (e.post_slot != e.pre_slot) {
      const Op& post_op = g->ops[static_cast<size_t>(e.post_slot - 1)];
      const bool zero_preserving =
          post_op.kind == OpKind::Relu || post_op.kind == OpKind::Gelu;
      if (!zero_preserving || post_op.inputs[0] != e.pre_slot)
        throw Error("catalog post op must be a relu/gelu applied to the producer: " +
                    e.layer);
    }
    g->catalog.push_back(e);
  }
  if (g->catalog.empty()) throw Error("weights file declares no catalog layers");

  if (j.contains("head") && !j.at("head").is_null()) {
    g->head_op = j.at("head").value("op", "");
    g->head_feature_layer = j.at("head").value("feature_layer", "");
  }
  if (j.contains("layer_aliases"))
    for (auto& [k, v] : j.at("layer_aliases").items())
      g->aliases[k] = v.get<std::string>();
  return g;
}

Aggregation parse_aggregation(const std::string& s) {
  if (s == "max") return Aggregation::Max;
  if (s == "mean") return Aggregation::Mean;
  throw Error("unknown aggregation: " + s);
}

ActivationSite parse_site(const std::string& s) {
  if (s == "post") return ActivationSite::Post;
  if (s == "pre") return ActivationSite::Pre;
  throw Error("unknown activation_site: " + s);
}

}  // namespace

ModelSpecRecord parse_model_spec(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const std::exception& e) {
    throw Error(std::string("invalid model spec: ") + e.what());
  }
  ModelSpecRecord rec;
  const std::string tag = j.at("architecture_tag").get<std::string>();
  if (tag == "conv")
    rec.architecture_tag = ArchitectureTag::Conv;
  else if (tag == "transformer")
    rec.architecture_tag = ArchitectureTag::Transformer;
  else if (tag == "synthetic")
    rec.architecture_tag = ArchitectureTag::Synthetic;
  else
    throw UsageError("unsupported architecture: " + tag);
  rec.weight_source = j.at("weight_source").get<std::string>();
  auto shape = j.at("input_shape").get<std::vector<int>>();
  if (shape.size() != 3) throw Error("input_shape must be [H,W,C]");
  rec.input_shape = {shape[0], shape[1], shape[2]};
  if (j.contains("preprocessing")) {
    const auto& p = j.at("preprocessing");
    if (p.contains("resize") && !p.at("resize").is_null()) {
      auto r = p.at("resize").get<std::vector<int>>();
      if (r.size() != 2) throw Error("preprocessing.resize must be [H,W]");
      rec.preprocessing.resize = {r[0], r[1]};
    }
    rec.preprocessing.mean = p.value("mean", std::vector<float>{});
    rec.preprocessing.stddev = p.value("std", std::vector<float>{});
  }
  rec.head_layer_name = j.value("head_layer_name", "");
  rec.aggregation = parse_aggregation(j.value("aggregation", "max"));
  rec.activation_site = parse_site(j.value("activation_site", "post"));
  return rec;
}

ModelHandle::ModelHandle() = default;
ModelHandle::ModelHandle(ModelHandle&&) noexcept = default;
ModelHandle& ModelHandle::operator=(ModelHandle&&) noexcept = default;
ModelHandle::~ModelHandle() = default;

ModelHandle ModelHandle::clone() const {
  ModelHandle copy;
  copy.spec_ = spec_;
  copy.graph_ = std::make_unique<detail::Graph>(*graph_);
  copy.catalog_ = catalog_;
  copy.aliases_ = aliases_;
  copy.class_count_ = class_count_;
  copy.base_hash_ = base_hash_;
  copy.ablated_ = ablated_;
  return copy;
}

const LayerId& ModelHandle::layer(const std::string& name) const {
  for (const auto& l : catalog_)
    if (l.name == name) return l;
  throw Error("unknown layer: " + name);
}

bool ModelHandle::has_layer(const std::string& name) const {
  for (const auto& l : catalog_)
    if (l.name == name) return true;
  return false;
}

std::string ModelHandle::resolve_layer(const std::string& name_or_alias) const {
  if (has_layer(name_or_alias)) return name_or_alias;
  if (name_or_alias == "last") return catalog_.back().name;
  auto it = aliases_.find(name_or_alias);
  if (it != aliases_.end() && has_layer(it->second)) return it->second;
  throw Error("unknown layer or alias: " + name_or_alias);
}

std::string ModelHandle::content_hash() const {
  if (ablated_.empty()) return base_hash_;
  std::string tag = base_hash_;
  for (const auto& [layer, unit] : ablated_)
    tag += "+" + layer + ":" + std::to_string(unit);
  return short_hash(tag);
}

Tensor ModelHandle::preprocess(const Image& image) const {
  if (!image.finite()) throw Error("image " + image.id + " has non-finite pixels");
  Image working = image;
  if (spec_.preprocessing.resize)
    working = resize_image(working, spec_.preprocessing.resize->first,
                           spec_.preprocessing.resize->second);
  const auto& [h, w, c] = spec_.input_shape;
  if (working.height != h || working.width != w || working.channels != c) {
    std::ostringstream msg;
    msg << "image " << image.id << " shape (" << working.height << "," << working.width
        << "," << working.channels << ") does not match model input (" << h << "," << w
        << "," << c << ")";
    throw Error(msg.str());
  }
  const auto& mean = spec_.preprocessing.mean;
  const auto& stddev = spec_.preprocessing.stddev;
  Tensor t({c, h, w});
  for (int ch = 0; ch < c; ++ch) {
    const float m = mean.empty() ? 0.0f : mean[mean.size() == 1 ? 0 : ch];
    const float s = stddev.empty() ? 1.0f : stddev[stddev.size() == 1 ? 0 : ch];
    for (int r = 0; r < h; ++r)
      for (int cc = 0; cc < w; ++cc) t(ch, r, cc) = (working.at(r, cc, ch) - m) / s;
  }
  return t;
}

std::vector<double> ModelHandle::predict(const Image& image) const {
  const auto slots = graph_->forward(preprocess(image));
  const Tensor& logits = slots[static_cast<size_t>(graph_->output_slot)];
  std::vector<double> probs(logits.data.begin(), logits.data.end());
  double mx = probs[0];
  for (double v : probs) mx = std::max(mx, v);
  double sum = 0.0;
  for (auto& v : probs) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (auto& v : probs) v /= sum;
  return probs;
}

std::pair<double, int> aggregate_unit(const Tensor& map, int unit, Aggregation agg) {
  double best = -std::numeric_limits<double>::infinity();
  double sum = 0.0;
  int best_pos = 0;
  int positions = 0;
  if (map.rank() == 3) {  // (C,H,W): unit-major
    const int hw = map.dim(1) * map.dim(2);
    positions = hw;
    for (int p = 0; p < hw; ++p) {
      const double v = map.data[static_cast<size_t>(unit) * hw + p];
      sum += v;
      if (v > best) {
        best = v;
        best_pos = p;
      }
    }
  } else if (map.rank() == 2) {  // (T,U): unit-minor
    positions = map.dim(0);
    for (int t = 0; t < positions; ++t) {
      const double v = map(t, unit);
      sum += v;
      if (v > best) {
        best = v;
        best_pos = t;
      }
    }
  } else {
    throw Error("aggregate_unit expects a (C,H,W) map or (T,U) token matrix");
  }
  const double scalar = agg == Aggregation::Max ? best : sum / positions;
  return {scalar, best_pos};
}

Tensor ModelHandle::feature_map(const Image& image, const std::string& layer_name) const {
  for (const auto& entry : graph_->catalog) {
    if (entry.layer != layer_name) continue;
    const auto slots = graph_->forward(preprocess(image));
    const int slot =
        spec_.activation_site == ActivationSite::Post ? entry.post_slot : entry.pre_slot;
    return slots[static_cast<size_t>(slot)];
  }
  throw Error("unknown layer: " + layer_name);
}

ActivationRecord ModelHandle::neuron_activation(const Image& image,
                                                const NeuronRef& neuron) const {
  const LayerId& lid = layer(neuron.layer);
  if (neuron.unit < 0 || neuron.unit >= lid.unit_count)
    throw Error("invalid neuron: " + neuron.layer + "/" + std::to_string(neuron.unit));
  const Tensor map = feature_map(image, neuron.layer);
  const auto [scalar, pos] = aggregate_unit(map, neuron.unit, spec_.aggregation);
  ActivationRecord rec;
  rec.neuron = neuron;
  rec.image_id = image.id;
  rec.scalar = scalar;
  if (lid.kind == LayerKind::ConvFeatureMap) {
    rec.argmax_row = pos / map.dim(2);
    rec.argmax_col = pos % map.dim(2);
  } else {
    rec.argmax_row = pos;
    rec.argmax_col = 0;
  }
  return rec;
}

ActivationMatrix ModelHandle::batch_activations(const std::vector<Image>& images,
                                                const std::string& layer_name) const {
  if (images.empty()) throw Error("batch_activations requires a non-empty image list");
  const LayerId& lid = layer(layer_name);
  ActivationMatrix m;
  m.unit_count = lid.unit_count;
  m.values.resize(images.size() * static_cast<size_t>(lid.unit_count));
  m.image_ids.reserve(images.size());
  for (size_t n = 0; n < images.size(); ++n) {
    m.image_ids.push_back(images[n].id);
    const Tensor map = feature_map(images[n], layer_name);
    for (int u = 0; u < lid.unit_count; ++u)
      m.values[n * static_cast<size_t>(lid.unit_count) + u] =
          aggregate_unit(map, u, spec_.aggregation).first;
  }
  return m;
}

std::string ModelHandle::head_feature_layer() const {
  return graph_->head_feature_layer;
}

std::vector<double> ModelHandle::classifier_head_weights(int class_index) const {
  if (graph_->head_op.empty() || graph_->head_feature_layer.empty())
    throw Error("model lacks a linear head over catalog units");
  if (class_index < 0 || class_index >= class_count_) throw Error("class out of range");
  const detail::Op* head = nullptr;
  for (const auto& op : graph_->ops)
    if (op.name == graph_->head_op) head = &op;
  if (!head || head->kind != detail::OpKind::Linear)
    throw Error("model lacks a linear head over catalog units");
  const Tensor& w = graph_->param(head->weight);
  const LayerId& feat = layer(graph_->head_feature_layer);
  if (w.dim(1) != feat.unit_count)
    throw Error("head weight width does not match feature layer units");
  std::vector<double> row(static_cast<size_t>(w.dim(1)));
  for (int u = 0; u < w.dim(1); ++u) row[static_cast<size_t>(u)] = w(class_index, u);
  return row;
}

AblationToken ModelHandle::ablate_unit(const NeuronRef& neuron) {
  const LayerId& lid = layer(neuron.layer);
  if (neuron.unit < 0 || neuron.unit >= lid.unit_count)
    throw Error("invalid neuron: " + neuron.layer + "/" + std::to_string(neuron.unit));
  if (ablated_.count({neuron.layer, neuron.unit}))
    throw Error("unit already ablated: " + neuron.layer + "/" +
                std::to_string(neuron.unit));
  const detail::CatalogEntry* entry = nullptr;
  for (const auto& e : graph_->catalog)
    if (e.layer == neuron.layer) entry = &e;
  const detail::Op& op = graph_->ops[static_cast<size_t>(entry->producer_op)];
  Tensor& w = graph_->param(op.weight);
  Tensor& b = graph_->param(op.bias);
  const size_t row = static_cast<size_t>(w.numel() / w.dim(0));
  AblationToken token;
  token.neuron = neuron;
  token.op_index = static_cast<size_t>(entry->producer_op);
  token.saved_weights.assign(w.data.begin() + static_cast<long>(neuron.unit) * row,
                             w.data.begin() + (static_cast<long>(neuron.unit) + 1) * row);
  token.saved_bias = b(neuron.unit);
  token.live = true;
  std::fill(w.data.begin() + static_cast<long>(neuron.unit) * row,
            w.data.begin() + (static_cast<long>(neuron.unit) + 1) * row, 0.0f);
  b(neuron.unit) = 0.0f;
  ablated_.insert({neuron.layer, neuron.unit});
  return token;
}

void ModelHandle::restore(AblationToken& token) {
  if (!token.live) throw Error("ablation token already restored");
  const detail::Op& op = graph_->ops[token.op_index];
  Tensor& w = graph_->param(op.weight);
  Tensor& b = graph_->param(op.bias);
  const size_t row = static_cast<size_t>(w.numel() / w.dim(0));
  std::copy(token.saved_weights.begin(), token.saved_weights.end(),
            w.data.begin() + static_cast<long>(token.neuron.unit) * row);
  b(token.neuron.unit) = token.saved_bias;
  token.live = false;
  ablated_.erase({token.neuron.layer, token.neuron.unit});
}

bool ModelHandle::is_ablated(const NeuronRef& neuron) const {
  return ablated_.count({neuron.layer, neuron.unit}) > 0;
}

ModelHandle load_model(const ModelSpecRecord& spec, const std::filesystem::path& base_dir) {
  ModelHandle handle;
  handle.spec_ = spec;
  const std::filesystem::path weights_path = base_dir / spec.weight_source;
  std::string weight_bytes;
  try {
    weight_bytes = read_file(weights_path);
  } catch (const Error&) {
    throw Error("unreadable weights: " + weights_path.string());
  }
  handle.graph_ = parse_weights(weight_bytes, weights_path.parent_path());
  handle.aliases_ = handle.graph_->aliases;

  const auto& gshape = handle.graph_->input_shape;
  if (gshape[0] != spec.input_shape[2] || gshape[1] != spec.input_shape[0] ||
      gshape[2] != spec.input_shape[1])
    throw Error("model spec input_shape disagrees with weights input shape");

  // One throwaway forward validates shapes and the layer catalog.
  std::vector<Tensor> slots;
  try {
    slots = handle.graph_->forward(Tensor({gshape[0], gshape[1], gshape[2]}));
  } catch (const std::exception& e) {
    throw Error(std::string("layer introspection failure: ") + e.what());
  }
  for (const auto& e : handle.graph_->catalog) {
    const Tensor& post = slots[static_cast<size_t>(e.post_slot)];
    const int units = e.kind == LayerKind::ConvFeatureMap
                          ? (post.rank() == 3 ? post.dim(0) : -1)
                          : (post.rank() == 2 ? post.dim(1) : -1);
    if (units != e.units)
      throw Error("layer introspection failure: catalog units mismatch for " + e.layer);
    handle.catalog_.push_back({e.layer, e.kind, e.units});
  }
  const Tensor& out = slots[static_cast<size_t>(handle.graph_->output_slot)];
  if (out.rank() != 1 || out.dim(0) < 2)
    throw Error("model output must be a class logit vector of length >= 2");
  handle.class_count_ = out.dim(0);

  if (!spec.head_layer_name.empty() && handle.graph_->head_op.empty())
    handle.graph_->head_op = spec.head_layer_name;

  nlohmann::ordered_json spec_j;
  spec_j["tag"] = to_string(spec.architecture_tag);
  spec_j["site"] = spec.activation_site == ActivationSite::Post ? "post" : "pre";
  spec_j["agg"] = spec.aggregation == Aggregation::Max ? "max" : "mean";
  spec_j["mean"] = spec.preprocessing.mean;
  spec_j["std"] = spec.preprocessing.stddev;
  handle.base_hash_ = short_hash(spec_j.dump() + weight_bytes);
  return handle;
}

ModelHandle load_model(const std::filesystem::path& spec_path) {
  const std::string text = read_file(spec_path);
  const ModelSpecRecord rec = parse_model_spec(text);
  return load_model(rec, spec_path.parent_path());
}

}  // namespace unitscope
