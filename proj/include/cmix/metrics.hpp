#pragma once

// Evaluation metrics over candidate sets, chains and the event log.

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cmix/adversary.hpp"
#include "cmix/sim.hpp"

namespace cmix::metrics {

/// Linking probability credited to one transition: 1/|set| when the truth
/// is a candidate, 0 otherwise (including the empty set).
double transition_probability(const adversary::LinkCandidateSet& s);

/// Mean transition probability over sets carrying ground truth; nullopt
/// when there is no such transition.
std::optional<double> success_rate(const std::vector<adversary::LinkCandidateSet>& sets);

struct DistanceReport {
    std::map<std::int64_t, std::size_t> histogram_km;  // floor(distance / 1 km) -> chains
    std::optional<double> average_m;
};

DistanceReport tracked_distance(const std::vector<adversary::Chain>& chains);

/// Anonymity set of every zone busy period: distinct members plus decoy
/// streams planned for the zone while it was occupied.
std::vector<std::size_t> anonymity_set_sizes(const sim::EventLog& log);

/// (value, fraction of samples <= value) at each distinct value.
std::vector<std::pair<std::size_t, double>> empirical_cdf(std::vector<std::size_t> samples);

struct LinkabilityReport {
    std::optional<double> success_rate;
    std::size_t transitions = 0;
    std::map<std::uint32_t, std::optional<double>> per_zone;
    std::map<std::int64_t, std::optional<double>> per_hour;  // simulation hour index
    std::array<std::size_t, 3> linked_sets{};                // 2-, 3- and 4+-pseudonym chains
    DistanceReport distance;
    std::vector<std::size_t> anonymity_sets;
};

LinkabilityReport linkability(const adversary::AttackResult& attack, const sim::EventLog& log);

// ---------------------------------------------------------------------------
// Overhead

struct CostModel {
    double rsu_sign_ms = 0.3;
    double rsu_verify_ms = 0.4;
    double vehicle_sign_ms = 3.0;
    double vehicle_verify_ms = 3.5;
    double check_ms = 3.68e-4;  // one filter membership test
};

enum class EntityClass { Vehicle, Rsu, Pca };

EntityClass classify(EntityId id) noexcept;
std::string_view to_string(EntityClass c) noexcept;

/// Computation charged for one event.
double event_ms(const sim::Event& e, const CostModel& costs = {});

struct EntityOverhead {
    EntityId id;
    EntityClass cls = EntityClass::Vehicle;
    double bytes = 0.0;
    double ms = 0.0;
    std::size_t active_seconds = 0;  // one-second buckets holding any event of the entity
    double bytes_per_s = 0.0;
    double ms_per_s = 0.0;
};

struct ClassOverhead {
    std::size_t entities = 0;
    double bytes_per_s = 0.0;  // mean over entities
    double ms_per_s = 0.0;
};

struct SecondOverhead {
    double bytes = 0.0;
    double ms = 0.0;
    std::size_t entities = 0;
};

struct OverheadReport {
    std::vector<EntityOverhead> entities;  // ascending id
    std::map<EntityClass, ClassOverhead> classes;
    std::map<EntityClass, std::map<std::int64_t, SecondOverhead>> series;
    std::map<std::string, double> bytes_by_kind;
};

OverheadReport overhead(const sim::EventLog& log, const CostModel& costs = {});

// ---------------------------------------------------------------------------
// Serialization

nlohmann::json to_json(const LinkabilityReport& r);
nlohmann::json to_json(const OverheadReport& r);
std::string linkability_csv(const LinkabilityReport& r);
std::string overhead_csv(const OverheadReport& r);

}  // namespace cmix::metrics
