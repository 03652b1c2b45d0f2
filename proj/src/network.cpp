#include "svrnn/network.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

namespace svrnn {

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv: return "conv";
    case LayerKind::deconv: return "deconv";
    case LayerKind::pool: return "pool";
    case LayerKind::split: return "split";
    case LayerKind::srnn: return "srnn";
    case LayerKind::upsample: return "upsample";
  }
  return "?";
}

namespace {

LayerKind parse_kind(const std::string& s) {
  for (auto k : {LayerKind::conv, LayerKind::deconv, LayerKind::pool, LayerKind::split,
                 LayerKind::srnn, LayerKind::upsample})
    if (to_string(k) == s) return k;
  fail(ErrorKind::format, "unknown layer kind '" + s + "'");
}

std::vector<std::string> split_list(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::string join(const std::vector<std::string>& items, char sep = ',') {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += sep;
    out += items[i];
  }
  return out;
}

std::size_t to_size(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const unsigned long long n = std::stoull(v, &used);
    if (used == v.size()) return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
  }
  fail(ErrorKind::format, "bad integer for '" + key + "': '" + v + "'");
}

std::map<std::string, std::string> parse_keys(std::istringstream& in, std::string first = "") {
  std::map<std::string, std::string> kv;
  std::string tok = std::move(first);
  do {
    if (tok.empty()) continue;
    const auto eq = tok.find('=');
    require(eq != std::string::npos && eq > 0, ErrorKind::format,
            "expected key=value, got '" + tok + "'");
    kv[tok.substr(0, eq)] = tok.substr(eq + 1);
  } while (in >> tok);
  return kv;
}

ConvSpec conv_spec(const LayerSpec& l, std::size_t in_channels) {
  return ConvSpec{in_channels, l.out_channels, l.kernel, l.kernel, l.stride, l.pad};
}

const Shape& shape_of(const std::map<std::string, Shape>& shapes, const std::string& name) {
  const auto it = shapes.find(name);
  require(it != shapes.end(), ErrorKind::shape, "tensor '" + name + "' is used before defined");
  return it->second;
}

}  // namespace

std::map<std::string, Shape> NetworkSpec::infer_shapes(std::size_t batch) const {
  require(in_height > 0 && in_width > 0 && in_channels > 0, ErrorKind::shape,
          "network input extents must be positive");
  std::map<std::string, Shape> shapes;
  shapes[input_name] = Shape{batch, in_channels, in_height, in_width};
  auto define = [&](const std::string& name, Shape s) {
    require(shapes.emplace(name, s).second, ErrorKind::shape,
            "tensor '" + name + "' defined twice");
  };
  for (const auto& l : layers) {
    const std::string where = std::string(to_string(l.kind)) + " " + join(l.outputs);
    require(!l.inputs.empty() && !l.outputs.empty(), ErrorKind::shape,
            where + ": missing inputs or outputs");
    const Shape in = shape_of(shapes, l.inputs[0]);
    switch (l.kind) {
      case LayerKind::conv: {
        const auto [h, w] = conv_spec(l, in.c).conv_output(in.h, in.w);
        define(l.output(), Shape{in.n, l.out_channels, h, w});
        break;
      }
      case LayerKind::deconv: {
        conv_spec(l, in.c).validate();
        const auto [h, w] = conv_spec(l, in.c).deconv_output(in.h, in.w);
        define(l.output(), Shape{in.n, l.out_channels, h, w});
        break;
      }
      case LayerKind::pool:
        require(in.h % l.stride == 0 && in.w % l.stride == 0, ErrorKind::shape,
                where + ": extents " + in.str() + " not divisible by " + std::to_string(l.stride));
        define(l.output(), Shape{in.n, in.c, in.h / l.stride, in.w / l.stride});
        break;
      case LayerKind::split:
        require(l.outputs.size() == 2 && in.c % 2 == 0, ErrorKind::shape,
                where + ": needs two outputs and an even channel count");
        define(l.outputs[0], Shape{in.n, in.c / 2, in.h, in.w});
        define(l.outputs[1], Shape{in.n, in.c / 2, in.h, in.w});
        break;
      case LayerKind::srnn:
        require(l.inputs.size() == (l.gated ? 2u : 1u), ErrorKind::shape,
                where + ": gated srnn takes two inputs, plain srnn one");
        if (l.gated)
          require(shape_of(shapes, l.inputs[1]) == in, ErrorKind::shape,
                  where + ": gate features must match the hidden input");
        define(l.output(), in);
        break;
      case LayerKind::upsample:
        require(l.factor >= 1, ErrorKind::shape, where + ": factor must be positive");
        define(l.output(), Shape{in.n, in.c, in.h * l.factor, in.w * l.factor});
        break;
    }
  }
  for (const auto* head : {&heads.coarse, &heads.gate, &heads.final}) {
    if (head->empty()) continue;
    shape_of(shapes, *head);
  }
  require(!heads.final.empty(), ErrorKind::shape, "network has no final head");
  const Shape f = shapes.at(heads.final);
  require(f.c == num_classes() && f.h == in_height && f.w == in_width, ErrorKind::shape,
          "final head " + f.str() + " does not match input extents and class count");
  if (!heads.coarse.empty())
    require(shapes.at(heads.coarse).c == num_classes(), ErrorKind::shape,
            "coarse head channel count differs from the vocabulary size");
  if (!heads.gate.empty())
    require(shapes.at(heads.gate).c == 1, ErrorKind::shape, "gate head must have one channel");
  return shapes;
}

std::vector<ParamShape> NetworkSpec::param_shapes() const {
  const auto shapes = infer_shapes(1);
  std::vector<ParamShape> out;
  for (const auto& l : layers) {
    const Shape in = shapes.at(l.inputs[0]);
    const std::string& name = l.output();
    switch (l.kind) {
      case LayerKind::conv:
        out.push_back({name + ".weight", Shape{l.out_channels, in.c, l.kernel, l.kernel}});
        out.push_back({name + ".bias", Shape{1, l.out_channels, 1, 1}, false, l.gate_head_bias});
        break;
      case LayerKind::deconv:
        out.push_back({name + ".weight", Shape{in.c, l.out_channels, l.kernel, l.kernel}});
        out.push_back({name + ".bias", Shape{1, l.out_channels, 1, 1}});
        break;
      case LayerKind::srnn:
        for (auto d : kDirections) {
          const std::string prefix = name + "." + std::string(to_string(d));
          out.push_back({prefix + ".omega", Shape{1, 1, in.c, in.c}, true});
          out.push_back({prefix + ".bias", Shape{1, in.c, 1, 1}});
        }
        break;
      default:
        break;
    }
  }
  return out;
}

std::size_t NetworkSpec::parameter_count() const {
  std::size_t total = 0;
  for (const auto& p : param_shapes()) total += p.shape.size();
  return total;
}

std::size_t NetworkSpec::count(LayerKind kind) const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.kind == kind;
  return n;
}

std::string NetworkSpec::to_text() const {
  std::ostringstream out;
  out << "network stage=" << stage << " variant=" << variant << "\n";
  out << "vocabulary " << join(vocabulary) << "\n";
  out << "input " << input_name << " channels=" << in_channels << " height=" << in_height
      << " width=" << in_width << "\n";
  for (const auto& l : layers) {
    out << to_string(l.kind) << " " << join(l.outputs) << " <- " << join(l.inputs);
    switch (l.kind) {
      case LayerKind::conv:
      case LayerKind::deconv:
        out << " out=" << l.out_channels << " kernel=" << l.kernel << " stride=" << l.stride
            << " pad=" << l.pad << " relu=" << l.relu;
        if (l.gate_head_bias) out << " bias_init=1";
        break;
      case LayerKind::pool:
        out << " stride=" << l.stride;
        break;
      case LayerKind::srnn:
        out << " gated=" << l.gated;
        break;
      case LayerKind::upsample:
        out << " factor=" << l.factor;
        break;
      case LayerKind::split:
        break;
    }
    out << "\n";
  }
  out << "head final_label=" << heads.final;
  if (!heads.coarse.empty()) out << " coarse_label=" << heads.coarse;
  if (!heads.gate.empty()) out << " gate=" << heads.gate;
  out << "\n";
  return out.str();
}

NetworkSpec NetworkSpec::parse(std::string_view text) {
  NetworkSpec spec;
  std::istringstream lines{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  bool have_input = false, have_head = false;
  while (std::getline(lines, line)) {
    ++lineno;
    std::istringstream in(line);
    std::string kind;
    if (!(in >> kind) || kind[0] == '#') continue;
    try {
      if (kind == "network") {
        auto kv = parse_keys(in);
        spec.stage = kv["stage"];
        spec.variant = kv["variant"];
      } else if (kind == "vocabulary") {
        std::string list;
        in >> list;
        spec.vocabulary = split_list(list);
      } else if (kind == "input") {
        in >> spec.input_name;
        auto kv = parse_keys(in);
        spec.in_channels = to_size("channels", kv["channels"]);
        spec.in_height = to_size("height", kv["height"]);
        spec.in_width = to_size("width", kv["width"]);
        have_input = true;
      } else if (kind == "head") {
        auto kv = parse_keys(in);
        for (const auto& [k, v] : kv) {
          if (k == "final_label") spec.heads.final = v;
          else if (k == "coarse_label") spec.heads.coarse = v;
          else if (k == "gate") spec.heads.gate = v;
          else fail(ErrorKind::format, "unknown head '" + k + "'");
        }
        have_head = true;
      } else {
        LayerSpec l;
        l.kind = parse_kind(kind);
        std::string outputs, arrow, inputs;
        in >> outputs >> arrow >> inputs;
        require(arrow == "<-", ErrorKind::format, "expected '<-' after outputs");
        l.outputs = split_list(outputs);
        l.inputs = split_list(inputs);
        for (const auto& [k, v] : parse_keys(in)) {
          if (k == "out") l.out_channels = to_size(k, v);
          else if (k == "kernel") l.kernel = to_size(k, v);
          else if (k == "stride") l.stride = to_size(k, v);
          else if (k == "pad") l.pad = to_size(k, v);
          else if (k == "relu") l.relu = to_size(k, v) != 0;
          else if (k == "gated") l.gated = to_size(k, v) != 0;
          else if (k == "factor") l.factor = to_size(k, v);
          else if (k == "bias_init") l.gate_head_bias = to_size(k, v) != 0;
          else fail(ErrorKind::format, "unknown key '" + k + "'");
        }
        if (l.kind == LayerKind::pool && l.stride == 1) l.stride = 2;
        spec.layers.push_back(std::move(l));
      }
    } catch (const Error& e) {
      fail(e.kind(), "network spec line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  require(have_input && have_head, ErrorKind::format, "network spec lacks an input or head line");
  spec.infer_shapes(1);
  return spec;
}

// ---------------------------------------------------------------------------

template <typename T>
ParamStore<T>::ParamStore(const NetworkSpec& spec) {
  for (const auto& ps : spec.param_shapes()) {
    add(Param<T>{ps.name, Tensor<T>(ps.shape), ps.spectral});
    shapes_.push_back(ps);
  }
}

template <typename T>
void ParamStore<T>::add(Param<T> p) {
  require(index_.emplace(p.name, params_.size()).second, ErrorKind::format,
          "duplicate parameter '" + p.name + "'");
  params_.push_back(std::move(p));
}

template <typename T>
void ParamStore<T>::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    const Shape s = p.value.shape();
    const bool is_bias = p.name.size() > 5 && p.name.ends_with(".bias");
    if (is_bias) {
      const bool gate = i < shapes_.size() && shapes_[i].gate_bias;
      p.value.fill(gate ? T(1) : T(0));
      continue;
    }
    double fan_in, fan_out;
    if (p.spectral) {
      fan_in = fan_out = double(s.h);
    } else {
      // conv: out x in x k x k; deconv: in x out x k x k. The sum is symmetric.
      fan_in = double(s.c * s.h * s.w);
      fan_out = double(s.n * s.h * s.w);
    }
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (auto& v : p.value.values()) v = static_cast<T>(dist(rng));
    if (p.spectral) {
      Matrix<T> m(s.h, s.w, std::vector<T>(p.value.values().begin(), p.value.values().end()));
      m = spectral_norm_project(m, T(1));
      std::copy(m.values().begin(), m.values().end(), p.value.data());
    }
  }
}

template <typename T>
std::size_t ParamStore<T>::index_of(const std::string& name) const {
  const auto it = index_.find(name);
  require(it != index_.end(), ErrorKind::format, "no parameter named '" + name + "'");
  return it->second;
}

template <typename T>
const Param<T>& ParamStore<T>::get(const std::string& name) const {
  return params_[index_of(name)];
}

template <typename T>
Param<T>& ParamStore<T>::get(const std::string& name) {
  return params_[index_of(name)];
}

template <typename T>
std::vector<Tensor<T>> ParamStore<T>::zeros_like() const {
  std::vector<Tensor<T>> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.emplace_back(p.value.shape());
  return out;
}

void LayerTiming::add(const std::string& name, double s) {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) {
      seconds[i] += s;
      return;
    }
  names.push_back(name);
  seconds.push_back(s);
}

// ---------------------------------------------------------------------------

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

template <typename T>
void accumulate(std::map<std::string, Tensor<T>>& grads, const std::string& name, Tensor<T> g) {
  auto it = grads.find(name);
  if (it == grads.end()) {
    grads.emplace(name, std::move(g));
    return;
  }
  T* dst = it->second.data();
  const T* src = g.data();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += src[i];
}

template <typename T>
void copy_into(Tensor<T>& dst, const Tensor<T>& src) {
  std::copy(src.values().begin(), src.values().end(), dst.data());
}

template <typename T>
void copy_into(Tensor<T>& dst, const std::vector<T>& src) {
  std::copy(src.begin(), src.end(), dst.data());
}

}  // namespace

template <typename T>
Network<T>::Network(NetworkSpec spec, ParamStore<T> params)
    : spec_(std::move(spec)), params_(std::move(params)) {
  const auto shapes = spec_.param_shapes();
  require(shapes.size() == params_.size(), ErrorKind::format,
          "parameter store has " + std::to_string(params_.size()) + " entries, spec needs " +
              std::to_string(shapes.size()));
  for (const auto& ps : shapes) {
    require(params_.contains(ps.name), ErrorKind::format, "missing parameter '" + ps.name + "'");
    require(params_.get(ps.name).value.shape() == ps.shape, ErrorKind::shape,
            "parameter '" + ps.name + "' has shape " + params_.get(ps.name).value.shape().str() +
                ", spec needs " + ps.shape.str());
    params_.get(ps.name).spectral = ps.spectral;
  }
}

template <typename T>
SrnnParams<T> Network<T>::srnn_params(const std::string& layer) const {
  SrnnParams<T> out;
  for (std::size_t i = 0; i < 4; ++i) {
    const std::string prefix = layer + "." + std::string(to_string(kDirections[i]));
    const auto& omega = params_.get(prefix + ".omega").value;
    const auto& bias = params_.get(prefix + ".bias").value;
    const std::size_t d = bias.size();
    out[i].omega = Matrix<T>(d, d, std::vector<T>(omega.values().begin(), omega.values().end()));
    out[i].bias.assign(bias.values().begin(), bias.values().end());
    out[i].direction = kDirections[i];
  }
  return out;
}

template <typename T>
std::map<std::string, Tensor<T>> Network<T>::forward(const Tensor<T>& input, ForwardTape<T>* tape,
                                                     LayerTiming* timing, int workers) const {
  const Shape is = input.shape();
  require(is.c == spec_.in_channels && is.h == spec_.in_height && is.w == spec_.in_width,
          ErrorKind::shape,
          "network input " + is.str() + " does not match " + std::to_string(spec_.in_channels) +
              "x" + std::to_string(spec_.in_height) + "x" + std::to_string(spec_.in_width));
  std::map<std::string, Tensor<T>> values;
  values[spec_.input_name] = input;
  for (const auto& l : spec_.layers) {
    const auto t0 = Clock::now();
    const Tensor<T>& x = values.at(l.inputs[0]);
    const std::string& name = l.output();
    switch (l.kind) {
      case LayerKind::conv:
      case LayerKind::deconv: {
        const auto& w = params_.get(name + ".weight").value;
        const auto& b = params_.get(name + ".bias").value;
        const ConvSpec cs = conv_spec(l, x.shape().c);
        Tensor<T> y = l.kind == LayerKind::conv ? conv2d_forward(x, w, b.values(), cs)
                                                : deconv2d_forward(x, w, b.values(), cs);
        if (l.relu) y = relu_forward(y);
        values[name] = std::move(y);
        break;
      }
      case LayerKind::pool: {
        auto r = maxpool2d_forward(x, l.stride, l.stride);
        values[name] = r.out;
        if (tape) tape->pools[name] = std::move(r);
        break;
      }
      case LayerKind::split: {
        auto [a, b] = channel_split(x);
        values[l.outputs[0]] = std::move(a);
        values[l.outputs[1]] = std::move(b);
        break;
      }
      case LayerKind::srnn: {
        const Tensor<T>* gf = l.gated ? &values.at(l.inputs[1]) : nullptr;
        SrnnTape<T>* st = tape ? &tape->scans[name] : nullptr;
        values[name] = srnn_forward(x, gf, srnn_params(name), st, workers);
        break;
      }
      case LayerKind::upsample:
        values[name] = upsample_bilinear(x, l.factor);
        break;
    }
    if (timing) timing->add(name, since(t0));
  }
  if (tape) tape->values = values;
  return values;
}

template <typename T>
std::vector<Tensor<T>> Network<T>::backward(ForwardTape<T>& tape,
                                            const std::map<std::string, Tensor<T>>& head_grads,
                                            LayerTiming* timing, int workers) const {
  require(!tape.values.empty(), ErrorKind::value, "backward called without a forward tape");
  std::map<std::string, Tensor<T>> grads;
  for (const auto& [name, g] : head_grads) {
    require(tape.values.count(name) && tape.values.at(name).shape() == g.shape(), ErrorKind::shape,
            "head gradient '" + name + "' does not match its forward tensor");
    accumulate(grads, name, g);
  }
  auto param_grads = params_.zeros_like();
  for (auto it = spec_.layers.rbegin(); it != spec_.layers.rend(); ++it) {
    const auto& l = *it;
    const std::string& name = l.output();
    bool any = false;
    for (const auto& o : l.outputs) any = any || grads.count(o);
    if (!any) continue;
    const auto t0 = Clock::now();
    auto take = [&](const std::string& o) {
      auto g = grads.find(o);
      if (g == grads.end()) return Tensor<T>(tape.values.at(o).shape());
      Tensor<T> out = std::move(g->second);
      grads.erase(g);
      return out;
    };
    const Tensor<T>& x = tape.values.at(l.inputs[0]);
    switch (l.kind) {
      case LayerKind::conv:
      case LayerKind::deconv: {
        Tensor<T> go = take(name);
        if (l.relu) go = relu_backward(go, tape.values.at(name));
        const std::size_t wi = params_.index_of(name + ".weight");
        const std::size_t bi = params_.index_of(name + ".bias");
        const ConvSpec cs = conv_spec(l, x.shape().c);
        auto g = l.kind == LayerKind::conv ? conv2d_backward(go, x, params_[wi].value, cs)
                                           : deconv2d_backward(go, x, params_[wi].value, cs);
        copy_into(param_grads[wi], g.grad_w);
        copy_into(param_grads[bi], g.grad_b);
        accumulate(grads, l.inputs[0], std::move(g.grad_x));
        break;
      }
      case LayerKind::pool:
        accumulate(grads, l.inputs[0], maxpool2d_backward(take(name), tape.pools.at(name)));
        break;
      case LayerKind::split: {
        Tensor<T> a = take(l.outputs[0]);
        Tensor<T> b = take(l.outputs[1]);
        accumulate(grads, l.inputs[0], channel_concat(a, b));
        break;
      }
      case LayerKind::srnn: {
        auto g = srnn_backward(take(name), tape.scans.at(name), srnn_params(name), workers);
        for (std::size_t i = 0; i < 4; ++i) {
          const std::string prefix = name + "." + std::string(to_string(kDirections[i]));
          copy_into(param_grads[params_.index_of(prefix + ".omega")],
                    std::vector<T>(g.grad_omega[i].values().begin(), g.grad_omega[i].values().end()));
          copy_into(param_grads[params_.index_of(prefix + ".bias")], g.grad_bias[i]);
        }
        accumulate(grads, l.inputs[0], std::move(g.grad_x));
        if (l.gated) accumulate(grads, l.inputs[1], std::move(g.grad_gate_features));
        break;
      }
      case LayerKind::upsample:
        accumulate(grads, l.inputs[0], upsample_bilinear_backward(take(name), l.factor, x.shape()));
        break;
    }
    if (timing) timing->add(name, since(t0));
  }
  tape = ForwardTape<T>{};
  return param_grads;
}

template class ParamStore<float>;
template class ParamStore<double>;
template class Network<float>;
template class Network<double>;

}  // namespace svrnn
