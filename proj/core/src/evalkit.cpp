#include "hacl/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>

#include "hacl/rng.hpp"

namespace hacl::evalkit {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double cosine(std::span<const double> a, std::span<const double> b) {
    const double na = norm(a), nb = norm(b);
    if (na == 0.0 || nb == 0.0) throw std::invalid_argument("cosine: zero vector");
    return dot(a, b) / (na * nb);
}

std::vector<double> unit(std::span<const double> a) {
    const double n = norm(a);
    if (n == 0.0) throw std::invalid_argument("unit: zero vector");
    std::vector<double> out(a.begin(), a.end());
    for (double& v : out) v /= n;
    return out;
}

}  // namespace

const char* label_name(Label l) {
    switch (l) {
        case Label::image: return "image";
        case Label::gt_text: return "gt_text";
        case Label::hallucinated_text: return "hallucinated_text";
    }
    return "?";
}

std::vector<const RepSet::Entry*> RepSet::with_label(Label l) const {
    std::vector<const Entry*> out;
    for (const Entry& e : entries)
        if (e.label == l) out.push_back(&e);
    return out;
}

const RepSet::Entry* RepSet::find(int64_t scene_id, Label l) const {
    for (const Entry& e : entries)
        if (e.scene_id == scene_id && e.label == l) return &e;
    return nullptr;
}

RepSet build_repset(const model::TinyMllm& mllm, std::span<const worldgen::Scene> scenes,
                    std::span<const worldgen::CaptionRecord> captions) {
    std::map<int64_t, const worldgen::CaptionRecord*> gt, hall;
    for (const worldgen::CaptionRecord& c : captions) {
        if (c.kind == worldgen::CaptionKind::ground_truth)
            gt.emplace(c.scene_id, &c);
        else
            hall.emplace(c.scene_id, &c);  // first hallucination per scene
    }
    RepSet reps;
    for (const worldgen::Scene& s : scenes) {
        reps.entries.push_back({s.scene_id, Label::image, mllm.image_rep(s)});
        const auto g = gt.find(s.scene_id);
        if (g == gt.end())
            throw std::invalid_argument("build_repset: scene " + std::to_string(s.scene_id) +
                                        " has no ground-truth caption");
        reps.entries.push_back({s.scene_id, Label::gt_text, mllm.text_rep(g->second->tokens)});
        const auto h = hall.find(s.scene_id);
        if (h != hall.end())
            reps.entries.push_back(
                {s.scene_id, Label::hallucinated_text, mllm.text_rep(h->second->tokens)});
    }
    return reps;
}

double modality_gap(const RepSet& reps) {
    const auto images = reps.with_label(Label::image);
    const auto texts = reps.with_label(Label::gt_text);
    if (images.empty() || texts.empty())
        throw std::invalid_argument("modality_gap: need at least one rep per modality");
    const size_t d = images[0]->vec.size();
    std::vector<double> ci(d, 0.0), ct(d, 0.0);
    for (const auto* e : images) {
        const auto u = unit(e->vec);
        for (size_t j = 0; j < d; ++j) ci[j] += u[j];
    }
    for (const auto* e : texts) {
        const auto u = unit(e->vec);
        for (size_t j = 0; j < d; ++j) ct[j] += u[j];
    }
    double s = 0.0;
    for (size_t j = 0; j < d; ++j) {
        const double diff = ci[j] / images.size() - ct[j] / texts.size();
        s += diff * diff;
    }
    return std::sqrt(s);
}

double hallucination_margin(const RepSet& reps) {
    const auto images = reps.with_label(Label::image);
    if (images.empty()) throw std::invalid_argument("hallucination_margin: no image reps");
    double total = 0.0;
    for (const auto* img : images) {
        const RepSet::Entry* t = reps.find(img->scene_id, Label::gt_text);
        const RepSet::Entry* h = reps.find(img->scene_id, Label::hallucinated_text);
        if (!t || !h)
            throw std::invalid_argument("hallucination_margin: scene " +
                                        std::to_string(img->scene_id) +
                                        " is missing a paired text rep");
        total += cosine(img->vec, t->vec) - cosine(img->vec, h->vec);
    }
    return total / static_cast<double>(images.size());
}

double retrieval_at_k(const RepSet& reps, int k) {
    const auto images = reps.with_label(Label::image);
    const auto texts = reps.with_label(Label::gt_text);
    const int n = static_cast<int>(texts.size());
    if (static_cast<int>(images.size()) != n)
        throw std::invalid_argument("retrieval_at_k: unpaired image/text reps");
    if (k < 1 || k > n)
        throw std::invalid_argument("retrieval_at_k: k " + std::to_string(k) +
                                    " out of range for " + std::to_string(n) + " pairs");
    int hits = 0;
    for (const auto* img : images) {
        const auto ui = unit(img->vec);
        int pair_idx = -1;
        std::vector<double> sims(n);
        for (int j = 0; j < n; ++j) {
            sims[j] = dot(ui, unit(texts[j]->vec));
            if (texts[j]->scene_id == img->scene_id) pair_idx = j;
        }
        if (pair_idx < 0)
            throw std::invalid_argument("retrieval_at_k: image scene " +
                                        std::to_string(img->scene_id) + " has no paired text");
        int rank = 1;
        for (int j = 0; j < n; ++j) {
            if (j == pair_idx) continue;
            if (sims[j] > sims[pair_idx] || (sims[j] == sims[pair_idx] && j < pair_idx)) ++rank;
        }
        if (rank <= k) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(n);
}

std::vector<ProbeItem> make_probe_items(std::span<const worldgen::Scene> scenes, uint64_t seed) {
    std::vector<ProbeItem> items;
    items.reserve(scenes.size());
    for (size_t i = 0; i < scenes.size(); ++i) {
        const worldgen::Scene& s = scenes[i];
        Rng rng = Rng::keyed(seed, 0x90beULL, static_cast<uint64_t>(s.scene_id));
        ProbeItem item;
        item.scene_id = s.scene_id;
        if (i % 2 == 0) {
            item.label_yes = true;
            item.question_object =
                s.objects[rng.next_below(s.objects.size())].category;
        } else {
            item.label_yes = false;
            do {
                item.question_object = rng.next_int(0, worldgen::category_count() - 1);
            } while (s.has_category(item.question_object));
        }
        items.push_back(item);
    }
    return items;
}

std::vector<int> probe_tokens(int category) {
    const worldgen::Vocab& v = worldgen::Vocab::instance();
    return {v.a_id(), v.picture_id(), v.with_id(), v.noun_id(category, false)};
}

PopeMetrics score_answers(std::span<const ProbeItem> items, const std::vector<bool>& answers) {
    if (items.empty()) throw std::invalid_argument("score_answers: empty probe set");
    if (items.size() != answers.size())
        throw std::invalid_argument("score_answers: answer count mismatch");
    int tp = 0, fp = 0, tn = 0, fn = 0;
    for (size_t i = 0; i < items.size(); ++i) {
        if (answers[i] && items[i].label_yes) ++tp;
        else if (answers[i] && !items[i].label_yes) ++fp;
        else if (!answers[i] && !items[i].label_yes) ++tn;
        else ++fn;
    }
    PopeMetrics m;
    m.n = static_cast<int>(items.size());
    m.accuracy = static_cast<double>(tp + tn) / m.n;
    m.precision = (tp + fp) > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
    m.recall = (tp + fn) > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
    m.f1 = (m.precision + m.recall) > 0.0
               ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
               : 0.0;
    m.yes_ratio = static_cast<double>(tp + fp) / m.n;
    return m;
}

namespace {

double probe_similarity(const model::TinyMllm& mllm,
                        const std::map<int64_t, const worldgen::Scene*>& scene_by_id,
                        const ProbeItem& item) {
    const auto it = scene_by_id.find(item.scene_id);
    if (it == scene_by_id.end())
        throw std::invalid_argument("pope_probe: unknown scene " + std::to_string(item.scene_id));
    const std::vector<double> iv = mllm.image_rep(*it->second);
    const std::vector<double> tv = mllm.text_rep(probe_tokens(item.question_object));
    return cosine(iv, tv);
}

// smallest threshold maximizing calibration accuracy, scanned over midpoints
double fit_threshold(std::vector<std::pair<double, bool>> sims) {
    std::sort(sims.begin(), sims.end());
    std::vector<double> candidates;
    candidates.push_back(sims.front().first - 1.0);
    for (size_t i = 0; i + 1 < sims.size(); ++i)
        candidates.push_back(0.5 * (sims[i].first + sims[i + 1].first));
    candidates.push_back(sims.back().first + 1.0);
    double best_thr = candidates.front();
    int best_correct = -1;
    for (double thr : candidates) {
        int correct = 0;
        for (const auto& [s, yes] : sims)
            if ((s > thr) == yes) ++correct;
        if (correct > best_correct) {
            best_correct = correct;
            best_thr = thr;
        }
    }
    return best_thr;
}

}  // namespace

PopeMetrics pope_probe(const model::TinyMllm& mllm, std::span<const worldgen::Scene> scenes,
                       std::span<const ProbeItem> calibration, std::span<const ProbeItem> probe) {
    if (probe.empty()) throw std::invalid_argument("pope_probe: empty probe set");
    if (calibration.empty()) throw std::invalid_argument("pope_probe: empty calibration set");
    std::map<int64_t, const worldgen::Scene*> by_id;
    for (const worldgen::Scene& s : scenes) by_id[s.scene_id] = &s;

    std::vector<std::pair<double, bool>> calib_sims;
    calib_sims.reserve(calibration.size());
    for (const ProbeItem& item : calibration)
        calib_sims.emplace_back(probe_similarity(mllm, by_id, item), item.label_yes);
    const double thr = fit_threshold(std::move(calib_sims));

    std::vector<bool> answers;
    answers.reserve(probe.size());
    for (const ProbeItem& item : probe)
        answers.push_back(probe_similarity(mllm, by_id, item) > thr);
    PopeMetrics m = score_answers(probe, answers);
    m.threshold = thr;
    return m;
}

// ---------------------------------------------------------------------------
// PCA

namespace {

// cyclic Jacobi decomposition of a symmetric matrix; deterministic
void jacobi_eigen(std::vector<double>& a, int n, std::vector<double>& eigvals,
                  std::vector<double>& eigvecs) {
    eigvecs.assign(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) eigvecs[static_cast<size_t>(i) * n + i] = 1.0;
    for (int sweep = 0; sweep < 128; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) off += a[static_cast<size_t>(p) * n + q] *
                                                   a[static_cast<size_t>(p) * n + q];
        if (off < 1e-26) break;
        for (int p = 0; p < n; ++p) {
            for (int q = p + 1; q < n; ++q) {
                const double apq = a[static_cast<size_t>(p) * n + q];
                if (std::abs(apq) < 1e-300) continue;
                const double app = a[static_cast<size_t>(p) * n + p];
                const double aqq = a[static_cast<size_t>(q) * n + q];
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int k = 0; k < n; ++k) {
                    const double akp = a[static_cast<size_t>(k) * n + p];
                    const double akq = a[static_cast<size_t>(k) * n + q];
                    a[static_cast<size_t>(k) * n + p] = c * akp - s * akq;
                    a[static_cast<size_t>(k) * n + q] = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    const double apk = a[static_cast<size_t>(p) * n + k];
                    const double aqk = a[static_cast<size_t>(q) * n + k];
                    a[static_cast<size_t>(p) * n + k] = c * apk - s * aqk;
                    a[static_cast<size_t>(q) * n + k] = s * apk + c * aqk;
                }
                for (int k = 0; k < n; ++k) {
                    const double vkp = eigvecs[static_cast<size_t>(k) * n + p];
                    const double vkq = eigvecs[static_cast<size_t>(k) * n + q];
                    eigvecs[static_cast<size_t>(k) * n + p] = c * vkp - s * vkq;
                    eigvecs[static_cast<size_t>(k) * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    eigvals.resize(n);
    for (int i = 0; i < n; ++i) eigvals[i] = a[static_cast<size_t>(i) * n + i];
}

}  // namespace

Projection pca_project(const RepSet& reps) {
    const size_t n = reps.entries.size();
    if (n < 3) throw std::invalid_argument("pca_project: need at least 3 reps");
    const int d = static_cast<int>(reps.entries[0].vec.size());
    for (const auto& e : reps.entries)
        if (static_cast<int>(e.vec.size()) != d)
            throw std::invalid_argument("pca_project: inconsistent rep dimensions");

    std::vector<double> mean(d, 0.0);
    for (const auto& e : reps.entries)
        for (int j = 0; j < d; ++j) mean[j] += e.vec[j];
    for (double& v : mean) v /= static_cast<double>(n);

    std::vector<double> centered(n * d);
    for (size_t i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) centered[i * d + j] = reps.entries[i].vec[j] - mean[j];

    std::vector<double> cov(static_cast<size_t>(d) * d, 0.0);
    for (size_t i = 0; i < n; ++i)
        for (int p = 0; p < d; ++p) {
            const double cp = centered[i * d + p];
            for (int q = p; q < d; ++q) cov[static_cast<size_t>(p) * d + q] += cp * centered[i * d + q];
        }
    for (int p = 0; p < d; ++p)
        for (int q = p; q < d; ++q) {
            cov[static_cast<size_t>(p) * d + q] /= static_cast<double>(n - 1);
            cov[static_cast<size_t>(q) * d + p] = cov[static_cast<size_t>(p) * d + q];
        }

    double trace = 0.0;
    for (int p = 0; p < d; ++p) trace += cov[static_cast<size_t>(p) * d + p];

    std::vector<double> eigvals, eigvecs;
    jacobi_eigen(cov, d, eigvals, eigvecs);

    std::array<int, 2> top = {0, 1};
    {
        std::vector<int> order(d);
        for (int i = 0; i < d; ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(),
                         [&](int x, int y) { return eigvals[x] > eigvals[y]; });
        top = {order[0], order[1]};
    }

    Projection proj;
    proj.coords.assign(n, {0.0, 0.0});
    for (int axis = 0; axis < 2; ++axis) {
        const int col = top[axis];
        std::vector<double> v(d);
        for (int j = 0; j < d; ++j) v[j] = eigvecs[static_cast<size_t>(j) * d + col];
        // sign convention: the largest-magnitude component is positive
        int arg = 0;
        for (int j = 1; j < d; ++j)
            if (std::abs(v[j]) > std::abs(v[arg])) arg = j;
        if (v[arg] < 0.0)
            for (double& x : v) x = -x;
        for (size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (int j = 0; j < d; ++j) s += centered[i * d + j] * v[j];
            proj.coords[i][axis] = s;
        }
        proj.explained_variance[axis] =
            trace > 0.0 ? std::max(0.0, eigvals[col]) / trace : 0.0;
    }
    return proj;
}

void write_projection_csv(const RepSet& reps, const Projection& proj, const std::string& path) {
    if (reps.entries.size() != proj.coords.size())
        throw std::invalid_argument("write_projection_csv: projection does not match repset");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_projection_csv: cannot write " + path);
    out << "scene_id,label,x,y\n";
    char buf[64];
    for (size_t i = 0; i < reps.entries.size(); ++i) {
        const auto& e = reps.entries[i];
        out << e.scene_id << ',' << label_name(e.label);
        std::snprintf(buf, sizeof buf, ",%.17g,%.17g\n", proj.coords[i][0], proj.coords[i][1]);
        out << buf;
    }
}

}  // namespace hacl::evalkit
