#include "microrl/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace microrl {

namespace {

// Pointer views over the weight blocks of a flat parameter vector.
struct Views {
    const double *emb, *w_xh, *w_hh, *b_h, *w_out, *b_out;
    int V, E, H;

    Views(const std::vector<double>& p, const ParamLayout& L)
        : emb(p.data() + L.emb),
          w_xh(p.data() + L.w_xh),
          w_hh(p.data() + L.w_hh),
          b_h(p.data() + L.b_h),
          w_out(p.data() + L.w_out),
          b_out(p.data() + L.b_out),
          V(L.dims.vocab),
          E(L.dims.embed),
          H(L.dims.hidden) {}
};

// h_out = tanh(w_xh * emb[token] + w_hh * h_prev + b_h); h_out must not alias h_prev.
void step_cell(const Views& v, int token, const double* h_prev, double* h_out) {
    const double* e = v.emb + static_cast<std::size_t>(token) * v.E;
    for (int k = 0; k < v.H; ++k) {
        double a = v.b_h[k];
        const double* wx = v.w_xh + static_cast<std::size_t>(k) * v.E;
        for (int j = 0; j < v.E; ++j) a += wx[j] * e[j];
        const double* wh = v.w_hh + static_cast<std::size_t>(k) * v.H;
        for (int j = 0; j < v.H; ++j) a += wh[j] * h_prev[j];
        h_out[k] = std::tanh(a);
    }
}

void logits_from_state(const Views& v, const double* h, double* logits) {
    for (int t = 0; t < v.V; ++t) {
        double a = v.b_out[t];
        const double* w = v.w_out + static_cast<std::size_t>(t) * v.H;
        for (int k = 0; k < v.H; ++k) a += w[k] * h[k];
        logits[t] = a;
    }
}

void log_softmax_inplace(double* x, int n) {
    double mx = x[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, x[i]);
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += std::exp(x[i] - mx);
    double lse = mx + std::log(s);
    for (int i = 0; i < n; ++i) x[i] -= lse;
}

void softmax_inplace(double* x, int n) {
    double mx = x[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, x[i]);
    double s = 0.0;
    for (int i = 0; i < n; ++i) {
        x[i] = std::exp(x[i] - mx);
        s += x[i];
    }
    for (int i = 0; i < n; ++i) x[i] /= s;
}

void check_tokens(const std::vector<int>& ids, int vocab, const char* what) {
    for (int id : ids) {
        if (id < 0 || id >= vocab) {
            throw std::invalid_argument(std::string(what) + ": token id out of range");
        }
    }
}

}  // namespace

ParamLayout ParamLayout::make(ModelDims d) {
    ParamLayout L;
    L.dims = d;
    const std::size_t V = d.vocab, E = d.embed, H = d.hidden;
    L.emb = 0;
    L.w_xh = L.emb + V * E;
    L.w_hh = L.w_xh + H * E;
    L.b_h = L.w_hh + H * H;
    L.w_out = L.b_h + H;
    L.b_out = L.w_out + V * H;
    L.total = L.b_out + V;
    return L;
}

void GradientBuffer::add(const GradientBuffer& other) {
    if (other.g.size() != g.size()) throw std::invalid_argument("gradient buffer size mismatch");
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += other.g[i];
}

void GradientBuffer::scale(double c) {
    for (double& x : g) x *= c;
}

PolicyModel init_policy(ModelDims dims, std::uint64_t seed) {
    if (dims.vocab <= 0 || dims.embed <= 0 || dims.hidden <= 0) {
        throw std::invalid_argument("init_policy: dims must be positive");
    }
    PolicyModel m;
    m.dims = dims;
    m.role = Role::current;
    m.init_seed = seed;
    const ParamLayout L = m.layout();
    m.params.assign(L.total, 0.0);

    Rng rng(derive_seed(seed, 0xFFFFFFFFFFFFFFFFull));
    auto fill_normal = [&](std::size_t off, std::size_t count, double scale) {
        for (std::size_t i = 0; i < count; ++i) m.params[off + i] = scale * rng.next_normal();
    };
    const double se = 1.0 / std::sqrt(static_cast<double>(dims.embed));
    const double sh = 1.0 / std::sqrt(static_cast<double>(dims.hidden));
    fill_normal(L.emb, static_cast<std::size_t>(dims.vocab) * dims.embed, se);
    fill_normal(L.w_xh, static_cast<std::size_t>(dims.hidden) * dims.embed, se);
    fill_normal(L.w_hh, static_cast<std::size_t>(dims.hidden) * dims.hidden, sh);
    fill_normal(L.w_out, static_cast<std::size_t>(dims.vocab) * dims.hidden, sh);
    // b_h and b_out stay zero
    return m;
}

std::vector<double> log_probs(const PolicyModel& m, const TokenSequence& seq) {
    if (seq.completion.empty()) throw std::invalid_argument("log_probs: empty completion");
    check_tokens(seq.prompt, m.dims.vocab, "log_probs prompt");
    check_tokens(seq.completion, m.dims.vocab, "log_probs completion");

    const ParamLayout L = m.layout();
    const Views v(m.params, L);
    const std::size_t C = seq.completion.size();

    std::vector<double> h(v.H, 0.0), h2(v.H), logits(v.V), out(C);
    for (int tok : seq.prompt) {
        step_cell(v, tok, h.data(), h2.data());
        h.swap(h2);
    }
    for (std::size_t j = 0; j < C; ++j) {
        logits_from_state(v, h.data(), logits.data());
        log_softmax_inplace(logits.data(), v.V);
        out[j] = logits[seq.completion[j]];
        if (j + 1 < C) {
            step_cell(v, seq.completion[j], h.data(), h2.data());
            h.swap(h2);
        }
    }
    return out;
}

TokenSequence sample_completion(const PolicyModel& m, const std::vector<int>& prompt,
                                const SampleOptions& opts, Rng& rng) {
    if (opts.max_new_tokens < 1) throw std::invalid_argument("sample_completion: token cap must be >= 1");
    if (!opts.greedy && !(opts.temperature > 0.0)) {
        throw std::invalid_argument("sample_completion: temperature must be > 0");
    }
    if (opts.eos_id < 0 || opts.eos_id >= m.dims.vocab) {
        throw std::invalid_argument("sample_completion: eos id out of range");
    }
    check_tokens(prompt, m.dims.vocab, "sample_completion prompt");

    const ParamLayout L = m.layout();
    const Views v(m.params, L);

    TokenSequence seq;
    seq.prompt = prompt;
    std::vector<double> h(v.H, 0.0), h2(v.H), logits(v.V);
    for (int tok : prompt) {
        step_cell(v, tok, h.data(), h2.data());
        h.swap(h2);
    }
    for (int n = 0; n < opts.max_new_tokens; ++n) {
        logits_from_state(v, h.data(), logits.data());
        int tok = 0;
        if (opts.greedy) {
            for (int i = 1; i < v.V; ++i) {
                if (logits[i] > logits[tok]) tok = i;
            }
        } else {
            for (int i = 0; i < v.V; ++i) logits[i] /= opts.temperature;
            softmax_inplace(logits.data(), v.V);
            const double u = rng.next_double();
            double cum = 0.0;
            tok = v.V - 1;  // guards against cum < 1 from rounding
            for (int i = 0; i < v.V; ++i) {
                cum += logits[i];
                if (u < cum) {
                    tok = i;
                    break;
                }
            }
        }
        seq.completion.push_back(tok);
        if (tok == opts.eos_id) break;
        step_cell(v, tok, h.data(), h2.data());
        h.swap(h2);
    }
    return seq;
}

void accumulate_weighted_logprob_grad(const PolicyModel& m, const TokenSequence& seq,
                                      const std::vector<double>& weights, GradientBuffer& buf) {
    if (seq.completion.empty()) throw std::invalid_argument("logprob grad: empty completion");
    if (weights.size() != seq.completion.size()) {
        throw std::invalid_argument("logprob grad: weights/completion length mismatch");
    }
    const ParamLayout L = m.layout();
    if (buf.g.size() != L.total) throw std::invalid_argument("logprob grad: buffer size mismatch");
    check_tokens(seq.prompt, m.dims.vocab, "logprob grad prompt");
    check_tokens(seq.completion, m.dims.vocab, "logprob grad completion");

    const Views v(m.params, L);
    const int P = static_cast<int>(seq.prompt.size());
    const int C = static_cast<int>(seq.completion.size());
    const int consumed = P + C - 1;  // the final completion token feeds no prediction

    auto token_at = [&](int t) { return t < P ? seq.prompt[t] : seq.completion[t - P]; };

    // Forward with stored states: hs row t = hidden after consuming token t.
    const std::vector<double> zeros(v.H, 0.0);
    std::vector<double> hs(static_cast<std::size_t>(std::max(consumed, 1)) * v.H);
    for (int t = 0; t < consumed; ++t) {
        const double* h_prev = t > 0 ? hs.data() + static_cast<std::size_t>(t - 1) * v.H : zeros.data();
        step_cell(v, token_at(t), h_prev, hs.data() + static_cast<std::size_t>(t) * v.H);
    }
    // Distribution for completion position j, conditioned on state P+j-1.
    std::vector<double> probs(static_cast<std::size_t>(C) * v.V);
    for (int j = 0; j < C; ++j) {
        const int sj = P + j - 1;
        const double* hj = sj >= 0 ? hs.data() + static_cast<std::size_t>(sj) * v.H : zeros.data();
        double* row = probs.data() + static_cast<std::size_t>(j) * v.V;
        logits_from_state(v, hj, row);
        softmax_inplace(row, v.V);
    }

    double* ge = buf.g.data() + L.emb;
    double* gxh = buf.g.data() + L.w_xh;
    double* ghh = buf.g.data() + L.w_hh;
    double* gbh = buf.g.data() + L.b_h;
    double* gout = buf.g.data() + L.w_out;
    double* gbout = buf.g.data() + L.b_out;

    std::vector<double> dh(v.H, 0.0), dh_prev(v.H), da(v.H), dlogits(v.V);
    for (int t = consumed - 1; t >= 0; --t) {
        const double* ht = hs.data() + static_cast<std::size_t>(t) * v.H;
        const int j = t - P + 1;
        if (j >= 0 && j < C && weights[j] != 0.0) {
            const double* pj = probs.data() + static_cast<std::size_t>(j) * v.V;
            const int target = seq.completion[j];
            for (int i = 0; i < v.V; ++i) {
                dlogits[i] = weights[j] * ((i == target ? 1.0 : 0.0) - pj[i]);
            }
            for (int i = 0; i < v.V; ++i) {
                gbout[i] += dlogits[i];
                double* grow = gout + static_cast<std::size_t>(i) * v.H;
                const double* wrow = v.w_out + static_cast<std::size_t>(i) * v.H;
                for (int k = 0; k < v.H; ++k) {
                    grow[k] += dlogits[i] * ht[k];
                    dh[k] += wrow[k] * dlogits[i];
                }
            }
        }
        // Through tanh into the cell that produced ht.
        for (int k = 0; k < v.H; ++k) da[k] = dh[k] * (1.0 - ht[k] * ht[k]);
        const int x = token_at(t);
        const double* e = v.emb + static_cast<std::size_t>(x) * v.E;
        const double* hp = t > 0 ? hs.data() + static_cast<std::size_t>(t - 1) * v.H : zeros.data();
        double* gex = ge + static_cast<std::size_t>(x) * v.E;
        for (int k = 0; k < v.H; ++k) {
            const double d = da[k];
            double* gxrow = gxh + static_cast<std::size_t>(k) * v.E;
            const double* wxrow = v.w_xh + static_cast<std::size_t>(k) * v.E;
            for (int i = 0; i < v.E; ++i) {
                gxrow[i] += d * e[i];
                gex[i] += wxrow[i] * d;
            }
            double* ghrow = ghh + static_cast<std::size_t>(k) * v.H;
            for (int i = 0; i < v.H; ++i) ghrow[i] += d * hp[i];
            gbh[k] += d;
        }
        for (int i = 0; i < v.H; ++i) {
            double acc = 0.0;
            for (int k = 0; k < v.H; ++k) acc += v.w_hh[static_cast<std::size_t>(k) * v.H + i] * da[k];
            dh_prev[i] = acc;
        }
        dh.swap(dh_prev);
    }
    if (P == 0 && weights[0] != 0.0) {
        // First prediction conditioned on the all-zero initial state: only the
        // head bias receives gradient.
        const double* p0 = probs.data();
        const int target = seq.completion[0];
        for (int i = 0; i < v.V; ++i) {
            gbout[i] += weights[0] * ((i == target ? 1.0 : 0.0) - p0[i]);
        }
    }
}

std::vector<double> flat_params(const PolicyModel& m) {
    return m.params;
}

void set_flat_params(PolicyModel& m, const std::vector<double>& flat) {
    if (m.role != Role::current) throw std::logic_error("set_flat_params: snapshots are frozen");
    if (flat.size() != m.layout().total) {
        throw std::invalid_argument("set_flat_params: parameter count mismatch");
    }
    m.params = flat;
}

PolicyModel snapshot(const PolicyModel& m, Role role) {
    PolicyModel s = m;
    s.role = role;
    return s;
}

namespace {
constexpr char kModelMagic[4] = {'M', 'R', 'L', 'M'};
constexpr std::uint32_t kModelVersion = 1;

template <typename T>
void write_pod(std::ofstream& f, const T& x) {
    f.write(reinterpret_cast<const char*>(&x), sizeof(T));
}

template <typename T>
void read_pod(std::ifstream& f, T& x, const std::string& path) {
    f.read(reinterpret_cast<char*>(&x), sizeof(T));
    if (!f) throw std::runtime_error("model file truncated: " + path);
}
}  // namespace

void save_model(const PolicyModel& m, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open model file for writing: " + path);
    f.write(kModelMagic, 4);
    write_pod(f, kModelVersion);
    write_pod(f, static_cast<std::uint32_t>(m.dims.vocab));
    write_pod(f, static_cast<std::uint32_t>(m.dims.embed));
    write_pod(f, static_cast<std::uint32_t>(m.dims.hidden));
    write_pod(f, static_cast<std::uint64_t>(m.init_seed));
    write_pod(f, static_cast<std::uint64_t>(m.params.size()));
    f.write(reinterpret_cast<const char*>(m.params.data()),
            static_cast<std::streamsize>(m.params.size() * sizeof(double)));
    if (!f) throw std::runtime_error("failed writing model file: " + path);
}

PolicyModel load_model(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open model file: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kModelMagic, 4) != 0) {
        throw std::runtime_error("not a model file (bad magic): " + path);
    }
    std::uint32_t version = 0, V = 0, E = 0, H = 0;
    std::uint64_t seed = 0, count = 0;
    read_pod(f, version, path);
    if (version != kModelVersion) {
        throw std::runtime_error("unsupported model file version: " + path);
    }
    read_pod(f, V, path);
    read_pod(f, E, path);
    read_pod(f, H, path);
    read_pod(f, seed, path);
    read_pod(f, count, path);
    if (V == 0 || E == 0 || H == 0) throw std::runtime_error("model file has invalid dims: " + path);

    PolicyModel m;
    m.dims = {static_cast<int>(V), static_cast<int>(E), static_cast<int>(H)};
    m.role = Role::current;
    m.init_seed = seed;
    if (count != m.layout().total) {
        throw std::runtime_error("model file parameter count mismatch: " + path);
    }
    m.params.resize(count);
    f.read(reinterpret_cast<char*>(m.params.data()),
           static_cast<std::streamsize>(count * sizeof(double)));
    if (!f) throw std::runtime_error("model file truncated: " + path);
    return m;
}

}  // namespace microrl
