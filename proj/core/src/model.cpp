#include "hacl/model.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>

#include "hacl/rng.hpp"

namespace hacl::model {

using diff::Graph;
using diff::Tensor;
using diff::Var;

namespace {

constexpr double kInitStd = 0.08;
constexpr char kMagic[4] = {'H', 'A', 'C', 'L'};
constexpr uint32_t kVersion = 1;

Tensor gauss_init(Rng& rng, std::vector<int> shape, double std_dev) {
    Tensor t(std::move(shape));
    for (double& v : t.data) v = ParamStore::quantize(rng.next_gauss() * std_dev);
    return t;
}

Tensor const_init(std::vector<int> shape, double value) {
    Tensor t = Tensor::full(std::move(shape), value);
    for (double& v : t.data) v = ParamStore::quantize(v);
    return t;
}

Var causal_mask(Graph& g, int n) {
    Tensor m({n, n});
    const double neg_inf = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) m.at(i, j) = neg_inf;
    return g.constant(std::move(m));
}

std::vector<int> iota_ids(int n) {
    std::vector<int> ids(n);
    for (int i = 0; i < n; ++i) ids[i] = i;
    return ids;
}

}  // namespace

const char* group_name(Group g) {
    switch (g) {
        case Group::theta: return "theta";
        case Group::alpha: return "alpha";
        case Group::beta: return "beta";
    }
    return "?";
}

int ParamStore::add(std::string name, Group group, Tensor t) {
    if (index_of(name) >= 0) throw std::invalid_argument("ParamStore: duplicate name " + name);
    entries_.push_back({std::move(name), group, std::move(t)});
    return static_cast<int>(entries_.size()) - 1;
}

int ParamStore::index_of(const std::string& name) const {
    for (size_t i = 0; i < entries_.size(); ++i)
        if (entries_[i].name == name) return static_cast<int>(i);
    return -1;
}

size_t ParamStore::total_numel() const {
    size_t n = 0;
    for (const Entry& e : entries_) n += e.tensor.numel();
    return n;
}

ParamStore init_params(const Dims& dims, uint64_t seed) {
    if (dims.d % dims.heads != 0)
        throw std::invalid_argument("init_params: width not divisible by head count");
    if (dims.vocab <= worldgen::kEosId)
        throw std::invalid_argument("init_params: vocab too small");
    Rng rng = Rng::keyed(seed, 0x1417ULL);
    ParamStore p;
    const int d = dims.d;

    // theta: vision encoder (slot embeddings + one self-attention block)
    p.add("vision.cat_embed", Group::theta, gauss_init(rng, {worldgen::category_count(), d}, kInitStd));
    p.add("vision.color_embed", Group::theta, gauss_init(rng, {worldgen::color_count(), d}, kInitStd));
    p.add("vision.count_embed", Group::theta, gauss_init(rng, {worldgen::kMaxCount, d}, kInitStd));
    p.add("vision.pos_embed", Group::theta, gauss_init(rng, {worldgen::kPositionCount, d}, kInitStd));
    p.add("vision.attn_wq", Group::theta, gauss_init(rng, {d, d}, kInitStd));
    p.add("vision.attn_wk", Group::theta, gauss_init(rng, {d, d}, kInitStd));
    p.add("vision.attn_wv", Group::theta, gauss_init(rng, {d, d}, kInitStd));
    p.add("vision.attn_wo", Group::theta, gauss_init(rng, {d, d}, kInitStd));
    p.add("vision.ln_gain", Group::theta, const_init({d}, 1.0));
    p.add("vision.ln_bias", Group::theta, const_init({d}, 0.0));

    // alpha: learnable interface, one multi-head cross-attention abstractor.
    // Per-head key/value projections give each head its own readout subspace
    // of the object features; each query owns an output embedding so the m
    // tokens differentiate even under near-uniform attention. Output maps are
    // fan-in scaled to land visual tokens at text-embedding magnitude.
    {
        const int ih = interface_heads(dims);
        const int ihd = d / ih;
        for (int h = 0; h < ih; ++h) {
            const std::string hb = "interface.h" + std::to_string(h) + ".";
            p.add(hb + "queries", Group::alpha, gauss_init(rng, {dims.visual_tokens, ihd}, 1.0));
            p.add(hb + "key_w", Group::alpha, gauss_init(rng, {d, ihd}, kInitStd));
            p.add(hb + "value_w", Group::alpha, gauss_init(rng, {d, ihd}, kInitStd));
            p.add(hb + "out_w", Group::alpha,
                  gauss_init(rng, {ihd, d}, kInitStd / std::sqrt(static_cast<double>(d))));
        }
        p.add("interface.token_embed", Group::alpha,
              gauss_init(rng, {dims.visual_tokens, d}, kInitStd));
    }

    // beta: decoder-only LM
    p.add("lm.tok_embed", Group::beta, gauss_init(rng, {dims.vocab, d}, kInitStd));
    p.add("lm.pos_embed", Group::beta, gauss_init(rng, {dims.context, d}, kInitStd));
    const int hd = dims.head_dim();
    for (int l = 0; l < dims.layers; ++l) {
        const std::string base = "lm.l" + std::to_string(l) + ".";
        p.add(base + "ln1_gain", Group::beta, const_init({d}, 1.0));
        p.add(base + "ln1_bias", Group::beta, const_init({d}, 0.0));
        for (int h = 0; h < dims.heads; ++h) {
            const std::string hb = base + "h" + std::to_string(h) + ".";
            p.add(hb + "wq", Group::beta, gauss_init(rng, {d, hd}, kInitStd));
            p.add(hb + "wk", Group::beta, gauss_init(rng, {d, hd}, kInitStd));
            p.add(hb + "wv", Group::beta, gauss_init(rng, {d, hd}, kInitStd));
            p.add(hb + "wo", Group::beta, gauss_init(rng, {hd, d}, kInitStd));
        }
        p.add(base + "ln2_gain", Group::beta, const_init({d}, 1.0));
        p.add(base + "ln2_bias", Group::beta, const_init({d}, 0.0));
        p.add(base + "mlp_w1", Group::beta, gauss_init(rng, {d, 4 * d}, kInitStd));
        p.add(base + "mlp_b1", Group::beta, const_init({4 * d}, 0.0));
        p.add(base + "mlp_w2", Group::beta, gauss_init(rng, {4 * d, d}, kInitStd));
        p.add(base + "mlp_b2", Group::beta, const_init({d}, 0.0));
    }
    p.add("lm.final_ln_gain", Group::beta, const_init({d}, 1.0));
    p.add("lm.final_ln_bias", Group::beta, const_init({d}, 0.0));
    p.add("lm.head_w", Group::beta, gauss_init(rng, {d, dims.vocab}, kInitStd));
    p.add("lm.head_b", Group::beta, const_init({dims.vocab}, 0.0));
    return p;
}

int interface_heads(const Dims& dims) {
    const int ih = 2 * dims.heads;
    return dims.d % ih == 0 ? ih : dims.heads;
}

Dims default_dims() {
    Dims d;
    d.vocab = worldgen::Vocab::instance().size();
    return d;
}

TinyMllm::TinyMllm(const Dims& dims, uint64_t init_seed)
    : dims_(dims), params_(init_params(dims, init_seed)) {}

TinyMllm::TinyMllm(const Dims& dims, ParamStore params) : dims_(dims), params_(std::move(params)) {
    ParamStore expected = init_params(dims, 0);
    if (expected.count() != params_.count())
        throw std::invalid_argument("TinyMllm: parameter count does not match dims");
    for (size_t i = 0; i < params_.count(); ++i) {
        if (params_.entry(i).name != expected.entry(i).name ||
            !params_.entry(i).tensor.same_shape(expected.entry(i).tensor))
            throw std::invalid_argument("TinyMllm: parameter " + expected.entry(i).name +
                                        " has unexpected name or shape");
    }
}

int TinyMllm::idx(const std::string& name) const {
    const int i = params_.index_of(name);
    if (i < 0) throw std::logic_error("TinyMllm: missing parameter " + name);
    return i;
}

Binding TinyMllm::bind(Graph& g, const GroupSet& trainable) const {
    Binding b;
    b.vars.reserve(params_.count());
    for (const ParamStore::Entry& e : params_.entries())
        b.vars.push_back(g.leaf(e.tensor, trainable.has(e.group)));
    return b;
}

Var TinyMllm::object_features(Graph& g, const Binding& b, const worldgen::Scene& scene) const {
    if (scene.objects.empty()) throw std::invalid_argument("object_features: empty scene");
    std::vector<int> cats, cols, cnts, poss;
    for (const worldgen::SceneObject& o : scene.objects) {
        cats.push_back(o.category);
        cols.push_back(o.color);
        cnts.push_back(o.count - worldgen::kMinCount);
        poss.push_back(static_cast<int>(o.position));
    }
    Var x = g.embedding(b[idx("vision.cat_embed")], cats);
    x = g.add(x, g.embedding(b[idx("vision.color_embed")], cols));
    x = g.add(x, g.embedding(b[idx("vision.count_embed")], cnts));
    x = g.add(x, g.embedding(b[idx("vision.pos_embed")], poss));

    // one unmasked self-attention block; no positional signal, so the
    // object set is encoded permutation-equivariantly
    Var q = g.matmul(x, b[idx("vision.attn_wq")]);
    Var k = g.matmul(x, b[idx("vision.attn_wk")]);
    Var v = g.matmul(x, b[idx("vision.attn_wv")]);
    Var s = g.scale(g.matmul(q, g.transpose(k)), 1.0 / std::sqrt(static_cast<double>(dims_.d)));
    Var attn = g.matmul(g.softmax_rows(s), v);
    x = g.add(x, g.matmul(attn, b[idx("vision.attn_wo")]));
    return g.layernorm(x, b[idx("vision.ln_gain")], b[idx("vision.ln_bias")]);
}

Var TinyMllm::visual_tokens(Graph& g, const Binding& b, const worldgen::Scene& scene) const {
    Var feats = object_features(g, b, scene);
    const int ih = interface_heads(dims_);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dims_.d / ih));
    Var tokens = b[idx("interface.token_embed")];
    for (int h = 0; h < ih; ++h) {
        const std::string hb = "interface.h" + std::to_string(h) + ".";
        Var keys = g.matmul(feats, b[idx(hb + "key_w")]);
        Var values = g.matmul(feats, b[idx(hb + "value_w")]);
        Var scores = g.scale(g.matmul(b[idx(hb + "queries")], g.transpose(keys)), inv_sqrt);
        Var mixed = g.matmul(g.softmax_rows(scores), values);
        tokens = g.add(tokens, g.matmul(mixed, b[idx(hb + "out_w")]));
    }
    return tokens;
}

TokenSequenceWithEOS TinyMllm::encode_image(Graph& g, const Binding& b,
                                            const worldgen::Scene& scene) const {
    return encode_image_from(g, b, visual_tokens(g, b, scene));
}

TokenSequenceWithEOS TinyMllm::encode_image_from(Graph& g, const Binding& b, Var visual) const {
    const int eos_id = worldgen::kEosId;
    Var eos = g.embedding(b[idx("lm.tok_embed")], std::span<const int>(&eos_id, 1));
    const std::array<Var, 2> parts = {visual, eos};
    return {g.concat_rows(parts), dims_.visual_tokens};
}

TokenSequenceWithEOS TinyMllm::encode_text(Graph& g, const Binding& b,
                                           std::span<const int> tokens) const {
    for (int t : tokens)
        if (t < 0 || t >= dims_.vocab)
            throw std::invalid_argument("encode_text: token id " + std::to_string(t) +
                                        " outside vocab of " + std::to_string(dims_.vocab));
    const int eos_id = worldgen::kEosId;
    Var eos = g.embedding(b[idx("lm.tok_embed")], std::span<const int>(&eos_id, 1));
    if (tokens.empty()) return {eos, 0};
    Var emb = g.embedding(b[idx("lm.tok_embed")], tokens);
    const std::array<Var, 2> parts = {emb, eos};
    return {g.concat_rows(parts), static_cast<int>(tokens.size())};
}

Var TinyMllm::lm_hidden(Graph& g, const Binding& b, Var seq, Var mask) const {
    const int n = g.value(seq).shape[0];
    if (n > dims_.context)
        throw std::invalid_argument("lm_hidden: sequence length " + std::to_string(n) +
                                    " exceeds context " + std::to_string(dims_.context));
    Var x = g.add(seq, g.embedding(b[idx("lm.pos_embed")], iota_ids(n)));
    if (!mask.valid()) mask = causal_mask(g, n);
    const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(dims_.head_dim()));
    for (int l = 0; l < dims_.layers; ++l) {
        const std::string base = "lm.l" + std::to_string(l) + ".";
        Var h = g.layernorm(x, b[idx(base + "ln1_gain")], b[idx(base + "ln1_bias")]);
        for (int hd = 0; hd < dims_.heads; ++hd) {
            const std::string hb = base + "h" + std::to_string(hd) + ".";
            Var q = g.matmul(h, b[idx(hb + "wq")]);
            Var k = g.matmul(h, b[idx(hb + "wk")]);
            Var v = g.matmul(h, b[idx(hb + "wv")]);
            Var s = g.add(g.scale(g.matmul(q, g.transpose(k)), inv_sqrt_hd), mask);
            Var o = g.matmul(g.softmax_rows(s), v);
            x = g.add(x, g.matmul(o, b[idx(hb + "wo")]));
        }
        Var h2 = g.layernorm(x, b[idx(base + "ln2_gain")], b[idx(base + "ln2_bias")]);
        Var m1 = g.gelu(g.add(g.matmul(h2, b[idx(base + "mlp_w1")]), b[idx(base + "mlp_b1")]));
        x = g.add(x, g.add(g.matmul(m1, b[idx(base + "mlp_w2")]), b[idx(base + "mlp_b2")]));
    }
    return g.layernorm(x, b[idx("lm.final_ln_gain")], b[idx("lm.final_ln_bias")]);
}

Var TinyMllm::pool_global(Graph& g, const Binding& b, const TokenSequenceWithEOS& seq) const {
    Var hidden = lm_hidden(g, b, seq.embeddings);
    return g.slice_row(hidden, seq.eos_position);
}

Var TinyMllm::lm_head(Graph& g, const Binding& b, Var hidden, std::span<const int> rows) const {
    std::vector<Var> picked;
    picked.reserve(rows.size());
    for (int r : rows) picked.push_back(g.slice_row(hidden, r));
    Var stacked = g.concat_rows(picked);
    return g.add(g.matmul(stacked, b[idx("lm.head_w")]), b[idx("lm.head_b")]);
}

Var TinyMllm::lm_logits(Graph& g, const Binding& b, const worldgen::Scene& scene,
                        std::span<const int> caption) const {
    return lm_logits_from(g, b, visual_tokens(g, b, scene), caption);
}

Var TinyMllm::lm_logits_from(Graph& g, const Binding& b, Var visual,
                             std::span<const int> caption) const {
    if (caption.empty()) throw std::invalid_argument("lm_logits: empty caption");
    const int m = dims_.visual_tokens;
    const int total = m + 1 + static_cast<int>(caption.size());
    if (total > dims_.context)
        throw std::invalid_argument("lm_logits: sequence length " + std::to_string(total) +
                                    " exceeds context " + std::to_string(dims_.context));
    Var prefix = visual;
    const int bos_id = worldgen::kBosId;
    Var bos = g.embedding(b[idx("lm.tok_embed")], std::span<const int>(&bos_id, 1));
    Var cap = g.embedding(b[idx("lm.tok_embed")], caption);
    const std::array<Var, 3> parts = {prefix, bos, cap};
    Var hidden = lm_hidden(g, b, g.concat_rows(parts));
    std::vector<int> rows(caption.size());
    for (size_t j = 0; j < caption.size(); ++j) rows[j] = m + static_cast<int>(j);
    return lm_head(g, b, hidden, rows);
}

Var TinyMllm::text_lm_logits(Graph& g, const Binding& b, std::span<const int> caption) const {
    const int total = 1 + static_cast<int>(caption.size());
    if (total > dims_.context)
        throw std::invalid_argument("text_lm_logits: sequence length " + std::to_string(total) +
                                    " exceeds context " + std::to_string(dims_.context));
    const int bos_id = worldgen::kBosId;
    Var bos = g.embedding(b[idx("lm.tok_embed")], std::span<const int>(&bos_id, 1));
    Var seq = bos;
    if (!caption.empty()) {
        Var cap = g.embedding(b[idx("lm.tok_embed")], caption);
        const std::array<Var, 2> parts = {bos, cap};
        seq = g.concat_rows(parts);
    }
    Var hidden = lm_hidden(g, b, seq);
    return lm_head(g, b, hidden, iota_ids(total));
}

std::vector<double> TinyMllm::image_rep(const worldgen::Scene& scene) const {
    Graph g;
    Binding b = bind(g);
    Var rep = pool_global(g, b, encode_image(g, b, scene));
    return g.value(rep).data;
}

std::vector<double> TinyMllm::text_rep(std::span<const int> tokens) const {
    Graph g;
    Binding b = bind(g);
    Var rep = pool_global(g, b, encode_text(g, b, tokens));
    return g.value(rep).data;
}

// ---------------------------------------------------------------------------
// Checkpoint I/O

namespace {

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint32_t get_u32(const std::string& s, size_t& off) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(s[off++])) << (8 * i);
    return v;
}

uint64_t get_u64(const std::string& s, size_t& off) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<uint8_t>(s[off++])) << (8 * i);
    return v;
}

}  // namespace

void save_checkpoint(const ParamStore& params, const Dims& dims, const std::string& path) {
    std::string out;
    out.append(kMagic, 4);
    put_u32(out, kVersion);
    for (int v : {dims.d, dims.layers, dims.heads, dims.visual_tokens, dims.vocab, dims.context})
        put_u32(out, static_cast<uint32_t>(v));
    put_u32(out, static_cast<uint32_t>(params.count()));
    // byte offsets of each group's block within the data section
    uint64_t offsets[3] = {0, 0, 0};
    {
        uint64_t off = 0;
        bool seen[3] = {false, false, false};
        for (const ParamStore::Entry& e : params.entries()) {
            const int gi = static_cast<int>(e.group);
            if (!seen[gi]) {
                offsets[gi] = off;
                seen[gi] = true;
            }
            off += e.tensor.numel() * 4;
        }
    }
    for (uint64_t o : offsets) put_u64(out, o);
    for (const ParamStore::Entry& e : params.entries()) {
        for (double v : e.tensor.data) {
            const float f = static_cast<float>(v);
            uint32_t bits;
            std::memcpy(&bits, &f, 4);
            put_u32(out, bits);
        }
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw CheckpointError(CheckpointError::Kind::io, "cannot write " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw CheckpointError(CheckpointError::Kind::io, "short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError(CheckpointError::Kind::io, "cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    constexpr size_t kHeader = 4 + 4 + 6 * 4 + 4 + 3 * 8;
    if (buf.size() < kHeader)
        throw CheckpointError(CheckpointError::Kind::truncated,
                              path + ": file shorter than header");
    if (std::memcmp(buf.data(), kMagic, 4) != 0)
        throw CheckpointError(CheckpointError::Kind::bad_magic, path + ": bad magic");
    size_t off = 4;
    const uint32_t version = get_u32(buf, off);
    if (version != kVersion)
        throw CheckpointError(CheckpointError::Kind::bad_version,
                              path + ": unsupported version " + std::to_string(version));
    Dims dims;
    dims.d = static_cast<int>(get_u32(buf, off));
    dims.layers = static_cast<int>(get_u32(buf, off));
    dims.heads = static_cast<int>(get_u32(buf, off));
    dims.visual_tokens = static_cast<int>(get_u32(buf, off));
    dims.vocab = static_cast<int>(get_u32(buf, off));
    dims.context = static_cast<int>(get_u32(buf, off));
    const uint32_t entry_count = get_u32(buf, off);
    for (int i = 0; i < 3; ++i) get_u64(buf, off);  // offsets, informational

    ParamStore params;
    try {
        params = init_params(dims, 0);
    } catch (const std::invalid_argument& e) {
        throw CheckpointError(CheckpointError::Kind::dim_mismatch,
                              path + ": invalid dims in header (" + e.what() + ")");
    }
    if (entry_count != params.count())
        throw CheckpointError(CheckpointError::Kind::dim_mismatch,
                              path + ": entry count " + std::to_string(entry_count) +
                                  " does not match dims (expected " +
                                  std::to_string(params.count()) + ")");
    const size_t expected = kHeader + params.total_numel() * 4;
    if (buf.size() < expected)
        throw CheckpointError(CheckpointError::Kind::truncated,
                              path + ": expected " + std::to_string(expected) + " bytes, got " +
                                  std::to_string(buf.size()));
    if (buf.size() > expected)
        throw CheckpointError(CheckpointError::Kind::io,
                              path + ": trailing bytes after parameter data");
    for (size_t i = 0; i < params.count(); ++i) {
        for (double& v : params.entry(static_cast<int>(i)).tensor.data) {
            const uint32_t bits = get_u32(buf, off);
            float fv;
            std::memcpy(&fv, &bits, 4);
            v = static_cast<double>(fv);
        }
    }
    return {dims, std::move(params)};
}

}  // namespace hacl::model
