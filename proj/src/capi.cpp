#include "palu/palu.h"

#include <cstdlib>
#include <cstring>
#include <exception>
#include <new>
#include <span>
#include <string>

#include <json.hpp>

#include "palu/error.hpp"
#include "palu/harness.hpp"
#include "palu/masking.hpp"
#include "palu/metrics.hpp"
#include "palu/numerics.hpp"
#include "palu/objectives.hpp"

struct palu_config {
    palu::ExperimentConfig value;
};
struct palu_corpus {
    palu::Corpus value;
};
struct palu_model {
    palu::Model value;
};

namespace {

thread_local std::string g_last_error;

palu_status status_of(palu::ErrorCode code) {
    switch (code) {
        case palu::ErrorCode::kInvalidInput: return PALU_ERR_INVALID_INPUT;
        case palu::ErrorCode::kUndefinedValue: return PALU_ERR_UNDEFINED;
        case palu::ErrorCode::kOracleFailure: return PALU_ERR_ORACLE;
        case palu::ErrorCode::kCapacity: return PALU_ERR_CAPACITY;
        case palu::ErrorCode::kParse: return PALU_ERR_PARSE;
        case palu::ErrorCode::kIo: return PALU_ERR_IO;
        case palu::ErrorCode::kPrecondition: return PALU_ERR_PRECONDITION;
    }
    return PALU_ERR_INTERNAL;
}

template <typename F>
palu_status guarded(F&& f) {
    g_last_error.clear();
    try {
        f();
        return PALU_OK;
    } catch (const palu::Error& e) {
        g_last_error = e.what();
        return status_of(e.code());
    } catch (const std::bad_alloc&) {
        g_last_error = "out of memory";
        return PALU_ERR_CAPACITY;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return PALU_ERR_INTERNAL;
    }
}

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (out == nullptr) throw std::bad_alloc();
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

void put(char** out, const std::string& s) {
    if (out != nullptr) *out = dup_string(s);
}

void need(const void* p, const char* what) {
    if (p == nullptr) palu::fail(palu::ErrorCode::kInvalidInput, std::string(what) + " must not be null");
}

palu::Budget budget_of(std::size_t v) { return v == PALU_ALL ? palu::Budget::all() : palu::Budget::of(v); }

}  // namespace

extern "C" {

const char* palu_last_error(void) { return g_last_error.c_str(); }

const char* palu_status_name(palu_status status) {
    switch (status) {
        case PALU_OK: return "ok";
        case PALU_ERR_INVALID_INPUT: return "invalid_input";
        case PALU_ERR_UNDEFINED: return "undefined_value";
        case PALU_ERR_ORACLE: return "oracle_failure";
        case PALU_ERR_CAPACITY: return "capacity";
        case PALU_ERR_PARSE: return "parse";
        case PALU_ERR_IO: return "io";
        case PALU_ERR_PRECONDITION: return "precondition";
        case PALU_ERR_INTERNAL: return "internal";
    }
    return "unknown";
}

void palu_string_free(char* s) { std::free(s); }

palu_status palu_config_default(palu_config** out) {
    return guarded([&] {
        need(out, "out");
        *out = new palu_config{palu::ExperimentConfig::defaults()};
    });
}

palu_status palu_config_load(const char* path, palu_config** out) {
    return guarded([&] {
        need(path, "path");
        need(out, "out");
        *out = new palu_config{palu::ExperimentConfig::load(path)};
    });
}

palu_status palu_config_from_json(const char* json, int require_seeds, palu_config** out) {
    return guarded([&] {
        need(json, "json");
        need(out, "out");
        *out = new palu_config{palu::ExperimentConfig::from_json(json, require_seeds != 0)};
    });
}

palu_status palu_config_set(palu_config* cfg, const char* key, const char* value) {
    return guarded([&] {
        need(cfg, "cfg");
        need(key, "key");
        need(value, "value");
        palu::ExperimentConfig copy = cfg->value;
        copy.set(key, value);
        cfg->value = std::move(copy);
    });
}

palu_status palu_config_to_json(const palu_config* cfg, char** out) {
    return guarded([&] {
        need(cfg, "cfg");
        need(out, "out");
        *out = dup_string(nlohmann::json::parse(cfg->value.to_json()).dump(2));
    });
}

palu_status palu_config_hash(const palu_config* cfg, char** out_hex) {
    return guarded([&] {
        need(cfg, "cfg");
        need(out_hex, "out_hex");
        *out_hex = dup_string(cfg->value.hash_hex());
    });
}

void palu_config_free(palu_config* cfg) { delete cfg; }

palu_status palu_corpus_generate(const palu_config* cfg, palu_corpus** out) {
    return guarded([&] {
        need(cfg, "cfg");
        need(out, "out");
        *out = new palu_corpus{palu::generate_data(cfg->value)};
    });
}

palu_status palu_corpus_load(const char* path, palu_corpus** out) {
    return guarded([&] {
        need(path, "path");
        need(out, "out");
        *out = new palu_corpus{palu::load_corpus(path)};
    });
}

palu_status palu_corpus_save(const palu_corpus* corpus, const char* path) {
    return guarded([&] {
        need(corpus, "corpus");
        need(path, "path");
        palu::save_corpus(corpus->value, path);
    });
}

palu_status palu_corpus_summary(const palu_corpus* corpus, char** out_json) {
    return guarded([&] {
        need(corpus, "corpus");
        need(out_json, "out_json");
        const palu::CorpusSummary s = palu::summarize(corpus->value);
        nlohmann::ordered_json j;
        j["samples"] = s.samples;
        j["entities"] = s.entities;
        j["forget_entities"] = s.forget_entities;
        j["retain_entities"] = s.retain_entities;
        j["forget_samples"] = s.forget_samples;
        j["retain_samples"] = s.retain_samples;
        j["alias_samples"] = s.alias_samples;
        j["target_token_ratio"] = s.target_token_ratio;
        *out_json = dup_string(j.dump(2));
    });
}

void palu_corpus_free(palu_corpus* corpus) { delete corpus; }

palu_status palu_model_load(const char* path, palu_model** out) {
    return guarded([&] {
        need(path, "path");
        need(out, "out");
        *out = new palu_model{palu::load_checkpoint(path)};
    });
}

palu_status palu_model_save(const palu_model* model, const char* path) {
    return guarded([&] {
        need(model, "model");
        need(path, "path");
        palu::save_checkpoint(model->value, path);
    });
}

void palu_model_free(palu_model* model) { delete model; }

palu_status palu_pretrain(const palu_config* cfg, const palu_corpus* corpus, int retain_only, palu_model** out,
                          char** report_json) {
    bool converged = true;
    std::string em;
    const palu_status st = guarded([&] {
        need(cfg, "cfg");
        need(corpus, "corpus");
        need(out, "out");
        palu::PretrainReport rep;
        palu::Model m = palu::pretrain(cfg->value, corpus->value, retain_only != 0, &rep);
        put(report_json, rep.to_json(cfg->value));
        *out = new palu_model{std::move(m)};
        converged = rep.converged;
        em = "em_forget=" + std::to_string(rep.em_forget) + " em_retain=" + std::to_string(rep.em_retain);
    });
    if (st == PALU_OK && !converged) {
        g_last_error = "pretraining did not reach the EM threshold (" + em + ")";
        return PALU_ERR_PRECONDITION;
    }
    return st;
}

palu_status palu_unlearn(const palu_config* cfg, const palu_corpus* corpus, const palu_model* original,
                         const palu_model* retain, palu_model** out, char** report_json, char** timings_json) {
    return guarded([&] {
        need(cfg, "cfg");
        need(corpus, "corpus");
        need(original, "original");
        need(out, "out");
        palu::RunReport rep;
        palu::PhaseTimings timings;
        palu::Model m = palu::unlearn(cfg->value, corpus->value, original->value,
                                      retain != nullptr ? &retain->value : nullptr,
                                      report_json != nullptr ? &rep : nullptr, &timings);
        put(report_json, rep.to_json(cfg->value));
        put(timings_json, nlohmann::json(timings).dump(2));
        *out = new palu_model{std::move(m)};
    });
}

palu_status palu_evaluate(const palu_config* cfg, const palu_corpus* corpus, const palu_model* model,
                          const palu_model* retain, const palu_model* reference, char** out_json,
                          char** out_csv) {
    return guarded([&] {
        need(cfg, "cfg");
        need(corpus, "corpus");
        need(model, "model");
        const palu::MetricReport r =
            palu::evaluate(cfg->value, corpus->value, model->value, retain != nullptr ? &retain->value : nullptr,
                           reference != nullptr ? &reference->value : nullptr);
        put(out_json, nlohmann::json::parse(r.to_json()).dump(2));
        put(out_csv, palu::MetricReport::csv_header() + "\n" + r.to_csv_row() + "\n");
    });
}

palu_status palu_sweep(const char* grid_json, const char* out_dir, size_t jobs, char** summary_csv) {
    return guarded([&] {
        need(grid_json, "grid_json");
        const palu::SweepGrid grid = palu::SweepGrid::from_json(grid_json);
        const auto rows = palu::run_sweep(grid, out_dir != nullptr ? out_dir : "", jobs);
        std::string csv = palu::sweep_csv_header() + "\n";
        for (const auto& r : rows) csv += palu::sweep_csv_row(r) + "\n";
        put(summary_csv, csv);
    });
}

palu_status palu_demo_theory(char** out_csv) {
    return guarded([&] {
        need(out_csv, "out_csv");
        *out_csv = dup_string(palu::demo_theory_csv());
    });
}

palu_status palu_softmax(const double* z, size_t n, double* out) {
    return guarded([&] {
        need(z, "z");
        need(out, "out");
        const auto p = palu::softmax(std::span(z, n));
        std::copy(p.begin(), p.end(), out);
    });
}

palu_status palu_top_k(const double* z, size_t n, size_t k, size_t* out_indices, size_t* out_count) {
    return guarded([&] {
        need(z, "z");
        need(out_indices, "out_indices");
        const palu::TopKSet s = palu::top_k_indices(std::span(z, n), budget_of(k));
        std::copy(s.indices.begin(), s.indices.end(), out_indices);
        if (out_count != nullptr) *out_count = s.size();
    });
}

palu_status palu_local_entropy_loss(const double* z, size_t n, const size_t* top, size_t k, double c,
                                    double* out_loss, double* out_grad) {
    return guarded([&] {
        need(z, "z");
        need(top, "top");
        palu::TopKSet s;
        s.indices.assign(top, top + k);
        s.k = k;
        for (std::size_t i = 0; i < k; ++i) {
            palu::require(s.indices[i] < n, "top index out of range");
            palu::require(i == 0 || s.indices[i - 1] < s.indices[i], "top indices must be strictly increasing");
        }
        const palu::LossAndGrad lg = palu::local_entropy_loss(std::span(z, n), s, c);
        if (out_loss != nullptr) *out_loss = lg.loss;
        if (out_grad != nullptr) std::copy(lg.grad.begin(), lg.grad.end(), out_grad);
    });
}

palu_status palu_partition_tokens(const unsigned char* mask, size_t len, size_t n_budget, int* out_roles) {
    return guarded([&] {
        need(mask, "mask");
        need(out_roles, "out_roles");
        palu::SensitivityMask m;
        m.bits.assign(mask, mask + len);
        const palu::TokenPartition p = palu::partition_tokens(m, budget_of(n_budget));
        for (std::size_t i = 0; i < len; ++i) out_roles[i] = static_cast<int>(p.roles[i]);
    });
}

palu_status palu_ks_two_sample(const double* a, size_t na, const double* b, size_t nb, double* out_statistic,
                               double* out_p_value) {
    return guarded([&] {
        need(a, "a");
        need(b, "b");
        const palu::KsResult r = palu::ks_two_sample(std::span(a, na), std::span(b, nb));
        if (out_statistic != nullptr) *out_statistic = r.statistic;
        if (out_p_value != nullptr) *out_p_value = r.p_value;
    });
}

}  // extern "C"
