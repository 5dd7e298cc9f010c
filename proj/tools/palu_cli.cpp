// palu: command-line driver over the C API.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "palu/palu.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;
constexpr int kExitPrecondition = 3;

struct Failure {
    int code;
};

int exit_code_for(palu_status st) {
    switch (st) {
        case PALU_OK: return kExitOk;
        case PALU_ERR_INVALID_INPUT:
        case PALU_ERR_PARSE:
        case PALU_ERR_CAPACITY: return kExitUsage;
        case PALU_ERR_PRECONDITION: return kExitPrecondition;
        default: return kExitRuntime;
    }
}

void check(palu_status st, const std::string& what) {
    if (st == PALU_OK) return;
    std::cerr << "palu: " << what << ": " << palu_last_error() << "\n";
    throw Failure{exit_code_for(st)};
}

// Owning wrapper for strings returned by the library.
struct Text {
    char* p = nullptr;
    Text() = default;
    Text(const Text&) = delete;
    Text& operator=(const Text&) = delete;
    ~Text() { palu_string_free(p); }
    std::string str() const { return p ? p : ""; }
};

template <typename T, void (*Free)(T*)>
struct Handle {
    T* p = nullptr;
    Handle() = default;
    Handle(const Handle&) = delete;
    Handle& operator=(const Handle&) = delete;
    ~Handle() { Free(p); }
};
using Config = Handle<palu_config, palu_config_free>;
using CorpusH = Handle<palu_corpus, palu_corpus_free>;
using ModelH = Handle<palu_model, palu_model_free>;

void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os << text;
    if (!text.empty() && text.back() != '\n') os << '\n';
    if (!os) {
        std::cerr << "palu: cannot write " << path << "\n";
        throw Failure{kExitRuntime};
    }
}

std::string read_text(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        std::cerr << "palu: cannot open " << path << "\n";
        throw Failure{kExitUsage};
    }
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

struct Options {
    std::string config;
    std::string out;
    std::optional<long long> seed;
    std::size_t jobs = 1;
    std::string objective;
    bool retain_only = false;
    std::string corpus;
    std::string model;
    std::string retain_model;
    std::string reference;
};

void load_config(Config& cfg, const Options& o, const char* seed_key) {
    if (o.config.empty()) {
        check(palu_config_default(&cfg.p), "config");
    } else {
        check(palu_config_load(o.config.c_str(), &cfg.p), "config " + o.config);
    }
    if (o.seed && seed_key != nullptr) {
        check(palu_config_set(cfg.p, seed_key, std::to_string(*o.seed).c_str()), "--seed");
    }
    if (!o.objective.empty()) {
        check(palu_config_set(cfg.p, "objective", nlohmann::json(o.objective).dump().c_str()), "--objective");
    }
}

void obtain_corpus(CorpusH& corpus, const Config& cfg, const Options& o) {
    if (o.corpus.empty()) {
        check(palu_corpus_generate(cfg.p, &corpus.p), "generate corpus");
    } else {
        check(palu_corpus_load(o.corpus.c_str(), &corpus.p), "corpus " + o.corpus);
    }
}

void load_model(ModelH& m, const std::string& path, const char* what) {
    if (path.empty()) return;
    const palu_status st = palu_model_load(path.c_str(), &m.p);
    if (st == PALU_ERR_IO) {
        std::cerr << "palu: " << what << " checkpoint: " << palu_last_error() << "\n";
        throw Failure{kExitPrecondition};
    }
    check(st, std::string(what) + " checkpoint " + path);
}

std::string resolved_config(const Config& cfg) {
    Text t;
    check(palu_config_to_json(cfg.p, &t.p), "config");
    return t.str();
}

int cmd_gen_data(const Options& o) {
    Config cfg;
    load_config(cfg, o, "corpus_seed");
    CorpusH corpus;
    check(palu_corpus_generate(cfg.p, &corpus.p), "generate corpus");
    if (!o.out.empty()) {
        check(palu_corpus_save(corpus.p, o.out.c_str()), "write corpus");
        write_text(o.out + ".config.json", resolved_config(cfg));
    }
    Text summary;
    check(palu_corpus_summary(corpus.p, &summary.p), "summary");
    std::cout << summary.str() << "\n";
    return kExitOk;
}

int cmd_pretrain(const Options& o) {
    Config cfg;
    load_config(cfg, o, "pretrain_seed");
    CorpusH corpus;
    obtain_corpus(corpus, cfg, o);
    ModelH model;
    Text report;
    const palu_status st = palu_pretrain(cfg.p, corpus.p, o.retain_only ? 1 : 0, &model.p, &report.p);
    const std::string err = palu_last_error();
    if (st != PALU_OK && st != PALU_ERR_PRECONDITION) check(st, "pretrain");
    if (!o.out.empty() && model.p != nullptr) {
        check(palu_model_save(model.p, o.out.c_str()), "write checkpoint");
        write_text(o.out + ".report.json", report.str());
        write_text(o.out + ".config.json", resolved_config(cfg));
    }
    std::cout << report.str() << "\n";
    if (st == PALU_ERR_PRECONDITION) {
        std::cerr << "palu: pretrain: " << err << "\n";
        return kExitPrecondition;
    }
    return kExitOk;
}

int cmd_unlearn(const Options& o) {
    if (o.model.empty()) {
        std::cerr << "palu: unlearn needs --model (the Original checkpoint)\n";
        return kExitUsage;
    }
    Config cfg;
    load_config(cfg, o, "unlearn_seed");
    CorpusH corpus;
    obtain_corpus(corpus, cfg, o);
    ModelH original, retain, out;
    load_model(original, o.model, "original");
    load_model(retain, o.retain_model, "retain");
    Text report, timings;
    check(palu_unlearn(cfg.p, corpus.p, original.p, retain.p, &out.p, &report.p, &timings.p), "unlearn");
    if (!o.out.empty()) {
        check(palu_model_save(out.p, o.out.c_str()), "write checkpoint");
        write_text(o.out + ".report.json", report.str());
        write_text(o.out + ".config.json", resolved_config(cfg));
        write_text(o.out + ".timings.json", timings.str());
    }
    const auto j = nlohmann::json::parse(report.str());
    std::cout << nlohmann::json{{"config_hash", j["config_hash"]}, {"objective", j["objective"]},
                                {"before", j["before"]}, {"after", j["after"]}}
                     .dump(2)
              << "\n";
    return kExitOk;
}

int cmd_evaluate(const Options& o) {
    if (o.model.empty()) {
        std::cerr << "palu: evaluate needs --model\n";
        return kExitUsage;
    }
    Config cfg;
    load_config(cfg, o, nullptr);
    CorpusH corpus;
    obtain_corpus(corpus, cfg, o);
    ModelH model, retain, reference;
    load_model(model, o.model, "model");
    load_model(retain, o.retain_model, "retain");
    load_model(reference, o.reference, "reference");
    Text json, csv;
    check(palu_evaluate(cfg.p, corpus.p, model.p, retain.p, reference.p, &json.p, &csv.p), "evaluate");
    if (!o.out.empty()) {
        write_text(o.out + ".json", json.str());
        write_text(o.out + ".csv", csv.str());
        write_text(o.out + ".config.json", resolved_config(cfg));
    }
    std::cout << json.str() << "\n";
    return kExitOk;
}

int cmd_sweep(const Options& o) {
    if (o.config.empty()) {
        std::cerr << "palu: sweep needs --config (a grid file)\n";
        return kExitUsage;
    }
    nlohmann::json grid;
    try {
        grid = nlohmann::json::parse(read_text(o.config));
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "palu: grid " << o.config << ": " << e.what() << "\n";
        return kExitUsage;
    }
    if (!grid.is_object()) {
        std::cerr << "palu: grid " << o.config << ": expected a JSON object\n";
        return kExitUsage;
    }
    if (o.seed) grid["base"]["unlearn_seed"] = *o.seed;
    if (!o.objective.empty()) grid["objective"] = nlohmann::json::array({o.objective});
    if (!o.corpus.empty()) grid["corpus"] = o.corpus;
    if (!o.model.empty()) grid["original_checkpoint"] = o.model;
    if (!o.retain_model.empty()) grid["retain_checkpoint"] = o.retain_model;
    Text csv;
    check(palu_sweep(grid.dump().c_str(), o.out.c_str(), o.jobs, &csv.p), "sweep");
    std::cout << csv.str();
    return kExitOk;
}

int cmd_demo_theory(const Options& o) {
    Text csv;
    check(palu_demo_theory(&csv.p), "demo-theory");
    if (!o.out.empty()) write_text(o.out, csv.str());
    std::cout << csv.str();
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Localized-flattening unlearning lab on a toy language model"};
    app.require_subcommand(1);
    Options o;

    auto add_common = [&](CLI::App* sub, bool with_config = true) {
        if (with_config) sub->add_option("--config", o.config, "Experiment config (JSON)")->check(CLI::ExistingFile);
        sub->add_option("--out", o.out, "Output path");
    };
    auto add_inputs = [&](CLI::App* sub) {
        sub->add_option("--corpus", o.corpus, "Corpus file (generated from the config if absent)");
    };

    CLI::App* gen = app.add_subcommand("gen-data", "Generate the synthetic corpus");
    add_common(gen);
    gen->add_option("--seed", o.seed, "Override corpus_seed");

    CLI::App* pre = app.add_subcommand("pretrain", "Train the Original (or Retain) model");
    add_common(pre);
    add_inputs(pre);
    pre->add_option("--seed", o.seed, "Override pretrain_seed");
    pre->add_flag("--retain-only", o.retain_only, "Train on the retain split only");

    CLI::App* unl = app.add_subcommand("unlearn", "Unlearn the forget split");
    add_common(unl);
    add_inputs(unl);
    unl->add_option("--seed", o.seed, "Override unlearn_seed");
    unl->add_option("--objective", o.objective, "palu, ga, gd, global_flatten or top1");
    unl->add_option("--model", o.model, "Original checkpoint")->required();
    unl->add_option("--retain-model", o.retain_model, "Retain checkpoint (enables forget quality)");

    CLI::App* ev = app.add_subcommand("evaluate", "Evaluate a checkpoint");
    add_common(ev);
    add_inputs(ev);
    ev->add_option("--objective", o.objective, "Objective whose K/N define flatness metrics");
    ev->add_option("--model", o.model, "Checkpoint to evaluate")->required();
    ev->add_option("--retain-model", o.retain_model, "Retain checkpoint (enables forget quality)");
    ev->add_option("--reference", o.reference, "Pre-unlearning checkpoint (enables flatness and takeover)");

    CLI::App* sw = app.add_subcommand("sweep", "Run an ablation grid");
    add_common(sw);
    add_inputs(sw);
    sw->add_option("--seed", o.seed, "Override unlearn_seed of every point");
    sw->add_option("--jobs", o.jobs, "Parallel grid points")->check(CLI::PositiveNumber);
    sw->add_option("--objective", o.objective, "Restrict the grid to one objective");
    sw->add_option("--model", o.model, "Original checkpoint (pretrained if absent)");
    sw->add_option("--retain-model", o.retain_model, "Retain checkpoint (pretrained if absent)");

    CLI::App* demo = app.add_subcommand("demo-theory", "Print the modelless demonstrations as CSV");
    add_common(demo, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*gen) return cmd_gen_data(o);
        if (*pre) return cmd_pretrain(o);
        if (*unl) return cmd_unlearn(o);
        if (*ev) return cmd_evaluate(o);
        if (*sw) return cmd_sweep(o);
        if (*demo) return cmd_demo_theory(o);
    } catch (const Failure& f) {
        return f.code;
    } catch (const std::exception& e) {
        std::cerr << "palu: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}
