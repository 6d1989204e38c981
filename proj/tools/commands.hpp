#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace macl::cli {

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::size_t parallel = 1;
    bool float64 = false;

    std::string checkpoint;
    std::string target;  // name or index; first target when empty
    std::vector<std::string> then;  // continual: further targets, learned in order
    std::string kind;
    std::vector<std::size_t> top_n;
    std::string input;

    std::size_t count = 100;
    double alpha_min = 0.05;
    double alpha_max = 0.95;
    double span = 5.0;
};

int cmd_pretrain(const Options& opt);
int cmd_affinity(const Options& opt);
int cmd_atlas(const Options& opt);
int cmd_continual(const Options& opt);
int cmd_transfer(const Options& opt);
int cmd_baseline(const Options& opt);
int cmd_ablate(const Options& opt);
int cmd_theorem1(const Options& opt);
int cmd_report(const Options& opt);
int cmd_print_config(const Options& opt);

}  // namespace macl::cli
