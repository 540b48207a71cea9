#include "elm/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "elm/rng.hpp"

namespace elm {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

Tensor trunc_normal_param(const std::vector<int>& shape, Rng& rng, double stddev = 0.02) {
  Tensor t = Tensor::zeros(shape, true);
  for (double& v : t.vec()) v = rng.trunc_normal(stddev);
  return t;
}

ConvLayer make_conv(const ConvSpec& spec, Rng& rng, bool zero_init = false) {
  ConvLayer layer;
  layer.spec = spec;
  const int kc = spec.depthwise ? 1 : spec.in_channels;
  if (zero_init) {
    layer.k = Tensor::zeros({spec.out_channels, kc, spec.kernel_h, spec.kernel_w}, true);
  } else {
    layer.k = trunc_normal_param({spec.out_channels, kc, spec.kernel_h, spec.kernel_w}, rng);
  }
  layer.b = Tensor::zeros({spec.out_channels}, true);
  return layer;
}

ConvLayer make_tconv(const ConvSpec& spec, Rng& rng) {
  ConvLayer layer;
  layer.spec = spec;
  layer.k = trunc_normal_param({spec.in_channels, spec.out_channels, spec.kernel_h, spec.kernel_w}, rng);
  layer.b = Tensor::zeros({spec.out_channels}, true);
  return layer;
}

void visit_block(BlockWeights& b, const std::function<void(Tensor&)>& fn) {
  fn(b.ln1_g);
  fn(b.ln1_b);
  fn(b.ln2_g);
  fn(b.ln2_b);
  fn(b.wmsa.w_q);
  fn(b.wmsa.b_q);
  fn(b.wmsa.w_k);
  fn(b.wmsa.b_k);
  fn(b.wmsa.w_v);
  fn(b.wmsa.b_v);
  fn(b.wmsa.bias_table);
  fn(b.lmsa.p_q);
  fn(b.lmsa.b_q);
  fn(b.lmsa.p_k);
  fn(b.lmsa.b_k);
  fn(b.lmsa.p_v);
  fn(b.lmsa.b_v);
  fn(b.out_proj);
  fn(b.out_b);
  fn(b.leff.w1);
  fn(b.leff.b1);
  fn(b.leff.dw_k);
  fn(b.leff.dw_b);
  fn(b.leff.w2);
  fn(b.leff.b2);
}

void visit_conv(ConvLayer& c, const std::function<void(Tensor&)>& fn) {
  fn(c.k);
  fn(c.b);
}

}  // namespace

int ElmformerConfig::heads_at(int stage) const {
  if (!heads_per_stage.empty()) return heads_per_stage[static_cast<size_t>(stage)];
  return std::max(1, stage_channels(stage) / head_dim);
}

void ElmformerConfig::validate() const {
  require(base_channels >= 2 && base_channels % 2 == 0,
          "network config: base_channels " + std::to_string(base_channels) +
              " must be even and at least 2");
  require(depth >= 1, "network config: depth must be at least 1");
  require(window >= 2 && window % 2 == 0,
          "network config: window " + std::to_string(window) + " must be even (2x2 sub-tiles)");
  require(bottleneck_window >= 2 && bottleneck_window % 2 == 0,
          "network config: bottleneck_window " + std::to_string(bottleneck_window) +
              " must be even (2x2 sub-tiles)");
  require(head_dim >= 1, "network config: head_dim must be positive");
  require(heads_per_stage.empty() || heads_per_stage.size() == static_cast<size_t>(depth) + 1,
          "network config: heads_per_stage needs one entry per stage plus bottleneck (" +
              std::to_string(depth + 1) + "), got " + std::to_string(heads_per_stage.size()));
  for (int s = 0; s <= depth; ++s) {
    const int c = stage_channels(s);
    const int h = heads_at(s);
    require(h >= 1 && c % h == 0, "network config: stage " + std::to_string(s) + " heads " +
                                      std::to_string(h) + " do not divide channels " +
                                      std::to_string(c));
  }
}

void ElmformerConfig::validate_input(int h, int w) const {
  validate();
  require(h > 0 && w > 0, "network: input extents must be positive");
  const int align = 1 << (depth + 1);
  require(h % align == 0 && w % align == 0,
          "network: input " + std::to_string(h) + "x" + std::to_string(w) +
              " must be divisible by " + std::to_string(align) + " (depth " + std::to_string(depth) +
              " halvings after the stem)");
  for (int s = 0; s <= depth; ++s) {
    const int eh = h >> (s + 1);
    const int ew = w >> (s + 1);
    const int m = window_at(s);
    require(eh % m == 0 && ew % m == 0,
            "network: stage " + std::to_string(s) + " features " + std::to_string(eh) + "x" +
                std::to_string(ew) + " are not divisible by window " + std::to_string(m) +
                " (input " + std::to_string(h) + "x" + std::to_string(w) + ")");
  }
}

ElmformerWeights build(const ElmformerConfig& config) {
  config.validate();
  ElmformerWeights w;
  w.config = config;
  Rng rng(mix_seed(config.seed, 0x656c6dull));

  w.bfp = make_bfp_weights(config.base_channels, rng);

  for (int s = 0; s < config.depth; ++s) {
    const int c = config.stage_channels(s);
    StagePair pair;
    pair.block1 = make_block_weights(c, config.heads_at(s), config.window, rng);
    pair.block2 = make_block_weights(c, config.heads_at(s), config.window, rng);
    w.encoder.push_back(std::move(pair));
    w.down.push_back(make_conv(ConvSpec{c, 2 * c, 4, 4, 2, 1, false}, rng));
  }

  const int cb = config.stage_channels(config.depth);
  w.bottleneck.block1 = make_block_weights(cb, config.heads_at(config.depth), config.bottleneck_window, rng);
  w.bottleneck.block2 = make_block_weights(cb, config.heads_at(config.depth), config.bottleneck_window, rng);

  w.up.resize(static_cast<size_t>(config.depth));
  w.skip_merge.resize(static_cast<size_t>(config.depth));
  w.decoder.resize(static_cast<size_t>(config.depth));
  for (int s = config.depth - 1; s >= 0; --s) {
    const int c = config.stage_channels(s);
    w.up[static_cast<size_t>(s)] = make_tconv(ConvSpec{2 * c, c, 2, 2, 2, 0, false}, rng);
    w.skip_merge[static_cast<size_t>(s)] = make_conv(ConvSpec{2 * c, c, 1, 1, 1, 0, false}, rng);
    w.decoder[static_cast<size_t>(s)].block1 = make_block_weights(c, config.heads_at(s), config.window, rng);
    w.decoder[static_cast<size_t>(s)].block2 = make_block_weights(c, config.heads_at(s), config.window, rng);
  }

  const int c0 = config.base_channels;
  w.final_up = make_tconv(ConvSpec{c0, c0 / 2, 2, 2, 2, 0, false}, rng);
  w.final_conv = make_conv(ConvSpec{c0 / 2, 1, 3, 3, 1, 1, false}, rng, /*zero_init=*/true);
  return w;
}

void ElmformerWeights::visit(const std::function<void(Tensor&)>& fn) {
  fn(bfp.pack_k);
  fn(bfp.pack_b);
  fn(bfp.ds_k);
  fn(bfp.ds_b);
  fn(bfp.gate_spatial_k);
  fn(bfp.gate_spatial_b);
  fn(bfp.gate_color_k);
  fn(bfp.gate_color_b);
  for (size_t s = 0; s < encoder.size(); ++s) {
    visit_block(encoder[s].block1, fn);
    visit_block(encoder[s].block2, fn);
    visit_conv(down[s], fn);
  }
  visit_block(bottleneck.block1, fn);
  visit_block(bottleneck.block2, fn);
  for (int s = static_cast<int>(decoder.size()) - 1; s >= 0; --s) {
    visit_conv(up[static_cast<size_t>(s)], fn);
    visit_conv(skip_merge[static_cast<size_t>(s)], fn);
    visit_block(decoder[static_cast<size_t>(s)].block1, fn);
    visit_block(decoder[static_cast<size_t>(s)].block2, fn);
  }
  visit_conv(final_up, fn);
  visit_conv(final_conv, fn);
}

int64_t ElmformerWeights::parameter_count() {
  int64_t n = 0;
  visit([&n](Tensor& t) { n += t.numel(); });
  return n;
}

void ElmformerWeights::zero_grads() {
  visit([](Tensor& t) { t.zero_grad(); });
}

Tensor skip_merge_step(const Tensor& dec, const Tensor& enc, const ConvLayer& merge) {
  Tensor cat = concat_dim0(dec, enc);
  return conv2d(cat, merge.spec, merge.k, merge.b);
}

Tensor forward(const Tensor& mosaic, ElmformerWeights& w) {
  require(mosaic.ndim() == 3 && mosaic.dim(0) == 1,
          "network: expected [1,H,W] mosaic, got " + shape_str(mosaic.shape));
  w.config.validate_input(mosaic.dim(1), mosaic.dim(2));

  Tensor f = bfp_forward(mosaic, w.bfp);
  std::vector<Tensor> skips;
  for (size_t s = 0; s < w.encoder.size(); ++s) {
    f = lmwin_block(f, w.encoder[s].block1);
    f = lmwin_block(f, w.encoder[s].block2);
    skips.push_back(f);
    f = conv2d(f, w.down[s].spec, w.down[s].k, w.down[s].b);
  }
  f = lmwin_block(f, w.bottleneck.block1);
  f = lmwin_block(f, w.bottleneck.block2);
  for (int s = static_cast<int>(w.decoder.size()) - 1; s >= 0; --s) {
    const ConvLayer& up = w.up[static_cast<size_t>(s)];
    f = transposed_conv2d(f, up.spec, up.k, up.b);
    f = skip_merge_step(f, skips[static_cast<size_t>(s)], w.skip_merge[static_cast<size_t>(s)]);
    f = lmwin_block(f, w.decoder[static_cast<size_t>(s)].block1);
    f = lmwin_block(f, w.decoder[static_cast<size_t>(s)].block2);
  }
  f = transposed_conv2d(f, w.final_up.spec, w.final_up.k, w.final_up.b);
  Tensor residual = conv2d(f, w.final_conv.spec, w.final_conv.k, w.final_conv.b);
  return add(mosaic, residual);
}

RawImage forward(const RawImage& raw, ElmformerWeights& w) {
  Tensor in = Tensor::from({1, raw.height, raw.width}, raw.data);
  Tensor out = forward(in, w);
  RawImage img = RawImage::zeros(raw.height, raw.width);
  const double* p = out.ptr();
  for (size_t i = 0; i < img.data.size(); ++i) img.data[i] = std::min(1.0, std::max(0.0, p[i]));
  return img;
}

// ----- checkpoints ---------------------------------------------------------------

Checkpoint snapshot(ElmformerWeights& w) {
  Checkpoint c;
  c.config = w.config;
  w.visit([&c](Tensor& t) {
    c.params.insert(c.params.end(), t.vec().begin(), t.vec().end());
  });
  return c;
}

void load_into(ElmformerWeights& w, const Checkpoint& c) {
  const int64_t count = w.parameter_count();
  if (static_cast<int64_t>(c.params.size()) != count)
    throw std::runtime_error("checkpoint: parameter count " + std::to_string(c.params.size()) +
                             " does not match network layout (" + std::to_string(count) + ")");
  size_t off = 0;
  w.visit([&](Tensor& t) {
    std::copy(c.params.begin() + static_cast<long>(off),
              c.params.begin() + static_cast<long>(off + t.vec().size()), t.vec().begin());
    off += t.vec().size();
  });
}

namespace {

constexpr char kCkptMagic[4] = {'E', 'L', 'M', 'C'};
constexpr uint32_t kCkptVersion = 1;

void put_u32(std::string& buf, uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& buf, uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& buf, double d) {
  uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64(buf, bits);
}

uint32_t get_u32(const unsigned char* p) {
  uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

uint64_t get_u64(const unsigned char* p) {
  uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

double get_f64(const unsigned char* p) {
  const uint64_t bits = get_u64(p);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    const char* ws = " \t\r\n";
    const size_t a = s.find_first_not_of(ws);
    if (a == std::string::npos) return std::string();
    const size_t b = s.find_last_not_of(ws);
    return s.substr(a, b - a + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: line " + std::to_string(lineno) + " is not key=value: '" +
                               line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw std::runtime_error("config: empty key on line " + std::to_string(lineno));
    if (kv.count(key)) throw std::runtime_error("config: duplicate key '" + key + "'");
    kv[key] = value;
  }
  return kv;
}

int64_t to_int(const std::string& key, const std::string& value) {
  size_t used = 0;
  int64_t v = 0;
  try {
    v = std::stoll(value, &used);
  } catch (const std::exception&) {
    throw std::runtime_error("config: value for '" + key + "' is not an integer: '" + value + "'");
  }
  if (used != value.size())
    throw std::runtime_error("config: value for '" + key + "' is not an integer: '" + value + "'");
  return v;
}

uint64_t to_u64(const std::string& key, const std::string& value) {
  size_t used = 0;
  uint64_t v = 0;
  try {
    v = std::stoull(value, &used);
  } catch (const std::exception&) {
    throw std::runtime_error("config: value for '" + key + "' is not an unsigned integer: '" +
                             value + "'");
  }
  if (used != value.size())
    throw std::runtime_error("config: value for '" + key + "' is not an unsigned integer: '" +
                             value + "'");
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& c) {
  const std::string cfg = config_to_text(c.config);
  std::string buf;
  buf.reserve(32 + cfg.size() + c.params.size() * 8 +
              (c.has_optimizer ? 8 + c.m.size() * 8 + c.v.size() * 8 : 0));
  buf.append(kCkptMagic, 4);
  put_u32(buf, kCkptVersion);
  put_u32(buf, static_cast<uint32_t>(cfg.size()));
  buf.append(cfg);
  put_u64(buf, static_cast<uint64_t>(c.params.size()));
  for (double d : c.params) put_f64(buf, d);
  buf.push_back(c.has_optimizer ? 1 : 0);
  if (c.has_optimizer) {
    if (c.m.size() != c.params.size() || c.v.size() != c.params.size())
      throw std::runtime_error("checkpoint: optimizer moment sizes do not match parameters");
    put_u64(buf, c.step);
    for (double d : c.m) put_f64(buf, d);
    for (double d : c.v) put_f64(buf, d);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("checkpoint: short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const unsigned char* p = reinterpret_cast<const unsigned char*>(buf.data());
  if (buf.size() < 12 || std::memcmp(p, kCkptMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  if (get_u32(p + 4) != kCkptVersion)
    throw std::runtime_error("checkpoint: unsupported version in " + path);
  const uint32_t cfg_len = get_u32(p + 8);
  size_t off = 12;
  if (buf.size() < off + cfg_len + 8) throw std::runtime_error("checkpoint: truncated " + path);
  const std::string cfg_text = buf.substr(off, cfg_len);
  off += cfg_len;

  Checkpoint c;
  c.config = model_config_from(parse_config_text(cfg_text));
  const uint64_t count = get_u64(p + off);
  off += 8;
  if (buf.size() < off + count * 8 + 1) throw std::runtime_error("checkpoint: truncated " + path);
  c.params.resize(count);
  for (uint64_t i = 0; i < count; ++i) c.params[i] = get_f64(p + off + i * 8);
  off += count * 8;
  c.has_optimizer = p[off] != 0;
  off += 1;
  if (c.has_optimizer) {
    if (buf.size() < off + 8 + count * 16) throw std::runtime_error("checkpoint: truncated " + path);
    c.step = get_u64(p + off);
    off += 8;
    c.m.resize(count);
    for (uint64_t i = 0; i < count; ++i) c.m[i] = get_f64(p + off + i * 8);
    off += count * 8;
    c.v.resize(count);
    for (uint64_t i = 0; i < count; ++i) c.v[i] = get_f64(p + off + i * 8);
    off += count * 8;
  }
  if (off != buf.size())
    throw std::runtime_error("checkpoint: trailing bytes in " + path);
  return c;
}

// ----- configuration text -----------------------------------------------------------

std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_config_text(text);
}

std::string config_to_text(const ElmformerConfig& c) {
  std::ostringstream out;
  out << "base_channels=" << c.base_channels << "\n";
  out << "depth=" << c.depth << "\n";
  out << "window=" << c.window << "\n";
  out << "bottleneck_window=" << c.bottleneck_window << "\n";
  out << "head_dim=" << c.head_dim << "\n";
  out << "heads_per_stage=";
  for (int s = 0; s <= c.depth; ++s) {
    if (s) out << ",";
    out << c.heads_at(s);
  }
  out << "\n";
  out << "seed=" << c.seed << "\n";
  return out.str();
}

const std::vector<std::string>& model_config_keys() {
  static const std::vector<std::string> keys = {
      "base_channels", "depth", "window", "bottleneck_window", "head_dim", "heads_per_stage",
      "seed"};
  return keys;
}

ElmformerConfig model_config_from(const std::map<std::string, std::string>& kv) {
  ElmformerConfig c;
  auto it = kv.find("base_channels");
  if (it != kv.end()) c.base_channels = static_cast<int>(to_int(it->first, it->second));
  it = kv.find("depth");
  if (it != kv.end()) c.depth = static_cast<int>(to_int(it->first, it->second));
  it = kv.find("window");
  if (it != kv.end()) c.window = static_cast<int>(to_int(it->first, it->second));
  it = kv.find("bottleneck_window");
  if (it != kv.end()) c.bottleneck_window = static_cast<int>(to_int(it->first, it->second));
  it = kv.find("head_dim");
  if (it != kv.end()) c.head_dim = static_cast<int>(to_int(it->first, it->second));
  it = kv.find("seed");
  if (it != kv.end()) c.seed = to_u64(it->first, it->second);
  it = kv.find("heads_per_stage");
  if (it != kv.end() && !it->second.empty()) {
    std::stringstream ss(it->second);
    std::string part;
    while (std::getline(ss, part, ',')) {
      c.heads_per_stage.push_back(static_cast<int>(to_int("heads_per_stage", part)));
    }
  }
  c.validate();
  return c;
}

}  // namespace elm
