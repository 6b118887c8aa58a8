#include <fstream>
#include <iomanip>
#include <ostream>

#include "bbmtube/harness.hpp"
#include "json.hpp"
#include "parallel.hpp"
#include "util.hpp"

namespace bbmtube {

bool SuiteSummary::passed() const {
    return std::all_of(reports.begin(), reports.end(), [](const auto& r) { return r.passed(); });
}

SuiteSummary run_suite(const std::vector<ExperimentConfig>& experiments,
                       const std::filesystem::path& output_root, unsigned threads) {
    SuiteSummary summary;
    summary.reports.resize(experiments.size());
    detail::parallel_for(experiments.size(), threads, [&](std::size_t i) {
        summary.reports[i] = run_experiment(experiments[i], output_root);
    });

    nlohmann::json list = nlohmann::json::array();
    for (const auto& r : summary.reports) {
        nlohmann::json failed = nlohmann::json::array();
        for (const auto& t : r.targets) {
            if (!t.passed) failed.push_back(t.target.describe());
        }
        nlohmann::json entry = {{"name", r.name},
                                {"engine", to_string(r.engine)},
                                {"config_hash", r.hash},
                                {"passed", r.passed()},
                                {"targets", r.targets.size()},
                                {"failed_targets", failed},
                                {"output_dir", r.output_dir.string()},
                                {"wall_clock_seconds", r.wall_seconds}};
        if (r.failure) entry["failure"] = *r.failure;
        list.push_back(entry);
    }
    std::filesystem::create_directories(output_root);
    std::ofstream out(output_root / "summary.json");
    out << nlohmann::json{{"passed", summary.passed()},
                          {"experiments", list},
                          {"code_version", code_version()}}
               .dump(2)
        << '\n';
    return summary;
}

void print_summary_table(std::ostream& out, const SuiteSummary& summary) {
    std::size_t width = 10;
    for (const auto& r : summary.reports) width = std::max(width, r.name.size());
    out << std::left << std::setw(static_cast<int>(width)) << "experiment" << "  "
        << std::setw(13) << "engine" << std::setw(8) << "status" << "targets\n";
    for (const auto& r : summary.reports) {
        std::size_t ok = 0;
        for (const auto& t : r.targets) ok += t.passed ? 1 : 0;
        const char* status = r.failure ? "ERROR" : (r.passed() ? "PASS" : "FAIL");
        out << std::setw(static_cast<int>(width)) << r.name << "  " << std::setw(13)
            << to_string(r.engine) << std::setw(8) << status << ok << "/" << r.targets.size()
            << '\n';
        if (r.failure) out << "    error: " << *r.failure << '\n';
        for (const auto& t : r.targets) {
            if (t.passed) continue;
            out << "    failed: " << t.target.describe() << " (measured "
                << (t.measured ? format_shortest(*t.measured) : std::string("missing")) << ")\n";
        }
    }
    std::size_t passed = 0;
    for (const auto& r : summary.reports) passed += r.passed() ? 1 : 0;
    out << passed << "/" << summary.reports.size() << " experiments passed\n";
}

}  // namespace bbmtube
