#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"
#include "macl/error.hpp"

int main(int argc, char** argv) {
    using namespace macl::cli;
    Options opt;
    CLI::App app{"Mode-aware continual learning for conditional GANs"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "macl 0.1.0");

    app.add_option("--config", opt.config, "JSON run configuration")->check(CLI::ExistingFile);
    app.add_option("--seed", opt.seed, "Run a single seed instead of the configured list");
    app.add_option("--out", opt.out, "Output directory");
    app.add_option("--parallel", opt.parallel, "Seeds run concurrently")->check(CLI::PositiveNumber);
    app.add_flag("--float64", opt.float64, "Train and score in double precision");

    int (*handler)(const Options&) = nullptr;
    const auto sub = [&](const char* name, const char* help, int (*fn)(const Options&)) {
        CLI::App* s = app.add_subcommand(name, help);
        s->fallthrough();
        s->callback([&handler, fn] { handler = fn; });
        return s;
    };
    const auto with_checkpoint = [&](CLI::App* s) {
        s->add_option("--checkpoint", opt.checkpoint, "Start from this checkpoint instead of pretraining")
            ->check(CLI::ExistingFile);
        return s;
    };
    const auto with_target = [&](CLI::App* s) {
        s->add_option("--target", opt.target, "Target name or index (default: first)");
        return s;
    };

    sub("pretrain", "Train the source-mode cGAN", cmd_pretrain);
    with_checkpoint(sub("affinity", "Score every target and mode against every source mode", cmd_affinity));
    sub("atlas", "Embed a square affinity matrix in the plane", cmd_atlas)
        ->add_option("--input", opt.input, "Square matrix CSV")
        ->required()
        ->check(CLI::ExistingFile);
    with_target(with_checkpoint(sub("continual", "Add a target mode with replay of its closest modes",
                                    cmd_continual)))
        ->add_option("--then", opt.then, "Further targets to learn afterwards, in order (repeatable)");
    with_target(with_checkpoint(sub("transfer", "Fine-tune the closest mode onto the target", cmd_transfer)));
    with_target(with_checkpoint(sub("baseline", "Run a comparison method", cmd_baseline)))
        ->add_option("--kind", opt.kind, "individual | sequential_finetune | multitask")
        ->required()
        ->check(CLI::IsMember({"individual", "sequential_finetune", "multitask"}));
    with_target(with_checkpoint(sub("ablate", "Sweep the number of closest modes", cmd_ablate)))
        ->add_option("--n", opt.top_n, "Values of top-n to try")
        ->required()
        ->check(CLI::PositiveNumber);
    CLI::App* t1 = sub("theorem1", "Check the mixed-loss optimum on random quadratics", cmd_theorem1);
    t1->add_option("--count", opt.count, "Number of random cases");
    t1->add_option("--alpha-min", opt.alpha_min, "Smallest mixing weight");
    t1->add_option("--alpha-max", opt.alpha_max, "Largest mixing weight");
    t1->add_option("--span", opt.span, "Optima drawn from [-span, span]");
    with_target(sub("report", "Score a checkpoint's modes against the suite", cmd_report))
        ->add_option("--checkpoint", opt.checkpoint, "Checkpoint to score")
        ->required()
        ->check(CLI::ExistingFile);
    sub("print-config", "Print the resolved configuration", cmd_print_config);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        return handler(opt);
    } catch (const macl::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
