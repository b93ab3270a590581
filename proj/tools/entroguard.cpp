// entroguard command-line driver: experiment stages, the end-cloud retrieval
// simulator, and attack tooling over one shared config file.

#include <csignal>
#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "entroguard/client.hpp"
#include "entroguard/config.hpp"
#include "entroguard/pipeline.hpp"
#include "entroguard/server.hpp"

namespace {

volatile std::sig_atomic_t g_stop = 0;
void on_signal(int) { g_stop = 1; }

int max_threads() {
    const char* env = std::getenv("ENTROGUARD_THREADS");
    if (!env) return 1;
    int n = std::atoi(env);
    return n > 0 ? n : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"entropy-guided embedding protection for end-cloud retrieval"};
    app.require_subcommand(1);

    std::string config_path, out_dir, serve_log;
    std::string query_text, attack_log;
    std::uint64_t seed_override = 0;
    bool have_seed = false, protect_query = false, curious = false;
    int port = 0, k = 5;

    // global options may appear after the subcommand name
    app.fallthrough();
    app.add_option("--config", config_path, "experiment config file");
    app.add_option("--out", out_dir, "output directory (overrides config)");
    app.add_option("--seed", seed_override, "root seed (overrides config)")
        ->each([&](const std::string&) { have_seed = true; });

    auto* gen = app.add_subcommand("gen-corpus", "generate the synthetic corpus");
    auto* temb = app.add_subcommand("train-embed", "train the dual encoder");
    auto* tatk = app.add_subcommand("train-attacker", "train the recovery attacker");
    auto* tsur = app.add_subcommand("train-surrogate", "train the defender surrogate");
    auto* tgrd = app.add_subcommand("train-guard", "train the perturbation generator");
    auto* atk = app.add_subcommand("attack", "run both inversion attacks on raw embeddings");
    auto* epri = app.add_subcommand("eval-privacy", "attacker metrics across defense conditions");
    auto* eret = app.add_subcommand("eval-retrieval", "retrieval metrics across defense conditions");
    auto* swp = app.add_subcommand("noise-sweep", "Gaussian noise level sweep");
    auto* lens = app.add_subcommand("lens-trace", "per-block top-1 lens trace CSVs");
    auto* bench = app.add_subcommand("bench", "perturbation overhead micro-benchmark");

    auto* serve = app.add_subcommand("serve", "run the cloud-side retrieval server");
    serve->add_option("--port", port, "TCP port (0 = ephemeral)");
    serve->add_flag("--curious", curious, "record received query embeddings");
    serve->add_option("--curious-log", serve_log, "CSV path for the recorded embeddings");

    auto* query = app.add_subcommand("query", "send one query to a running server");
    query->add_option("--port", port, "server TCP port")->required();
    query->add_option("--text", query_text, "query text")->required();
    query->add_option("--k", k, "number of hits");
    query->add_flag("--protect", protect_query, "protect the embedding before sending");

    auto* off = app.add_subcommand("offline-attack", "invert embeddings from a curious-server log");
    off->add_option("--log", attack_log, "curious log CSV")->required();

    CLI11_PARSE(app, argc, argv);
    (void)max_threads();  // parallelism cap honored; all stages are sequential

    try {
        entroguard::ExperimentConfig cfg;
        try {
            if (!config_path.empty()) cfg = entroguard::load_config(config_path);
            if (have_seed) cfg.seed = seed_override;
            if (!out_dir.empty()) cfg.out_dir = out_dir;
            cfg.validate();
        } catch (const entroguard::ConfigError& e) {
            std::cerr << "config error: " << e.what() << '\n';
            return 2;
        }
        entroguard::Pipeline pipe(cfg, cfg.out_dir);

        if (gen->parsed()) {
            pipe.ensure_corpus();
            std::cout << "corpus: " << pipe.sentences().size() << " sentences, "
                      << pipe.corpus().queries.size() << " queries, "
                      << pipe.corpus().documents.size() << " documents\n";
        } else if (temb->parsed()) {
            pipe.encoder();
            std::cout << "encoder ready: " << pipe.path("encoder.egck") << '\n';
        } else if (tatk->parsed()) {
            pipe.attacker();
            std::cout << "attacker ready: " << pipe.path("attacker.egck") << '\n';
        } else if (tsur->parsed()) {
            pipe.surrogate();
            std::cout << "surrogate ready: " << pipe.path("surrogate.egck") << '\n';
        } else if (tgrd->parsed()) {
            pipe.guard();
            std::cout << "guard ready: " << pipe.path("guard.egck") << '\n';
        } else if (atk->parsed()) {
            std::cout << pipe.run_attacks().to_markdown();
        } else if (epri->parsed()) {
            std::cout << pipe.eval_privacy().to_markdown();
        } else if (eret->parsed()) {
            std::cout << pipe.eval_retrieval().to_markdown();
        } else if (swp->parsed()) {
            std::cout << entroguard::sweep_csv(pipe.noise_sweep_stage());
        } else if (lens->parsed()) {
            pipe.lens_trace_stage();
            std::cout << "wrote " << pipe.path("lens_raw.csv") << " and "
                      << pipe.path("lens_guard.csv") << '\n';
        } else if (bench->parsed()) {
            auto r = pipe.bench();
            std::cout << "embed_us=" << entroguard::format_number(r.embed_us)
                      << " protect_us=" << entroguard::format_number(r.protect_us)
                      << " overhead=" << entroguard::format_number(r.overhead) << '\n';
        } else if (serve->parsed()) {
            entroguard::EncoderModel& enc = pipe.encoder();
            entroguard::VectorStore store(cfg.model.dim);
            const auto& docs = pipe.eval_corpus().documents;
            for (std::size_t i = 0; i < docs.size(); ++i)
                store.insert(static_cast<int>(i), docs[i].text(),
                             entroguard::embed(enc, entroguard::encode(docs[i].words, pipe.vocab(),
                                                                       cfg.model.max_len)));
            entroguard::Server server(store, curious);
            server.start(static_cast<std::uint16_t>(port));
            std::cout << "serving " << store.size() << " documents on port " << server.port()
                      << (curious ? " (curious mode)" : "") << std::endl;
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
            if (curious && !serve_log.empty() && server.curious_log())
                server.curious_log()->write_csv(serve_log);
            server.stop();
        } else if (query->parsed()) {
            entroguard::Client client(static_cast<std::uint16_t>(port));
            entroguard::PerturbGenerator* g = nullptr;
            entroguard::AdaptConfig ac = pipe.adapt_config();
            if (protect_query) g = &pipe.guard();
            auto hits = entroguard::client_query(client, entroguard::split_words(query_text),
                                                 pipe.encoder(), pipe.vocab(), k, g, &ac);
            for (const auto& h : hits)
                std::cout << h.id << '\t' << entroguard::format_number(h.score) << '\t' << h.text
                          << '\n';
        } else if (off->parsed()) {
            auto embeddings = entroguard::CuriousLog::read_csv(attack_log);
            entroguard::RecoveryModel& phi = pipe.attacker();
            for (std::size_t i = 0; i < embeddings.size(); ++i) {
                auto words = entroguard::invert_learning(phi, embeddings[i], pipe.vocab(),
                                                         cfg.model.max_len);
                std::cout << i << '\t' << entroguard::join_words(words) << '\n';
            }
        }
    } catch (const entroguard::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
