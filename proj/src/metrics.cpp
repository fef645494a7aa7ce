#include <cstdio>
#include <fstream>

#include "dope/harness.hpp"

namespace dope::harness {

void write_metrics(const std::vector<MetricRow>& rows, const ojson& config_echo,
                   const std::string& json_path, const std::string& csv_path) {
    ojson report;
    report["config"] = config_echo;
    ojson results = ojson::array();
    for (const auto& r : rows) {
        ojson j;
        j["config"] = r.config_name;
        j["n_way"] = r.n_way;
        j["k_shot"] = r.k_shot;
        j["accuracy"] = r.accuracy;
        j["ci95"] = r.ci;
        j["episodes"] = r.episodes;
        j["wall_seconds"] = r.wall_seconds;
        results.push_back(j);
    }
    report["results"] = results;

    std::ofstream jf(json_path);
    if (!jf) throw IoError("write_metrics: cannot open " + json_path);
    jf << report.dump(2) << "\n";

    std::FILE* cf = std::fopen(csv_path.c_str(), "wb");
    if (!cf) throw IoError("write_metrics: cannot open " + csv_path);
    std::fputs("config,n_way,k_shot,accuracy,ci95,episodes,wall_seconds\n", cf);
    for (const auto& r : rows)
        std::fprintf(cf, "%s,%d,%d,%.6f,%.6f,%d,%.3f\n", r.config_name.c_str(), r.n_way,
                     r.k_shot, r.accuracy, r.ci, r.episodes, r.wall_seconds);
    std::fclose(cf);
}

} // namespace dope::harness
