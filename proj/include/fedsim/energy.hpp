#pragma once

#include <cmath>
#include <cstddef>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedsim {

inline constexpr double seconds_per_hour = 3600.0;

// Per-client hardware power draw in watts: one value for every client, or
// one value per client id.
struct PowerModel {
    std::vector<double> watts{100.0};

    double watts_for(std::size_t client) const {
        if (watts.empty()) throw std::invalid_argument("power model is empty");
        const double w = watts.size() == 1 ? watts.front() : watts.at(client);
        if (!(w > 0.0)) throw std::invalid_argument("client power must be positive");
        return w;
    }

    bool operator==(const PowerModel&) const = default;
};

// e = P * T, in watt-hours
inline double energy_wh(double watts, double seconds) {
    if (!(watts > 0.0)) throw std::invalid_argument("power must be positive");
    if (!(seconds >= 0.0)) throw std::invalid_argument("training time must be non-negative");
    return watts * seconds / seconds_per_hour;
}

struct EnergyEntry {
    std::size_t round = 0;
    std::size_t client_id = 0;
    double seconds = 0.0;
    double wh = 0.0;

    bool operator==(const EnergyEntry&) const = default;
};

// Neumaier-compensated sum of entry energies.
inline double total(std::span<const EnergyEntry> entries) noexcept {
    double sum = 0.0, carry = 0.0;
    for (const auto& e : entries) {
        const double t = sum + e.wh;
        if (std::abs(sum) >= std::abs(e.wh))
            carry += (sum - t) + e.wh;
        else
            carry += (e.wh - t) + sum;
        sum = t;
    }
    return sum + carry;
}

// Append-only; record() may be called from several threads.
class EnergyLedger {
public:
    EnergyLedger() = default;
    EnergyLedger(const EnergyLedger& other) : entries_(other.entries()) {}
    EnergyLedger& operator=(const EnergyLedger& other) {
        if (this != &other) {
            auto copy = other.entries();
            std::lock_guard lock(mutex_);
            entries_ = std::move(copy);
        }
        return *this;
    }

    double record(std::size_t round, std::size_t client, double watts, double seconds) {
        const double wh = energy_wh(watts, seconds);
        std::lock_guard lock(mutex_);
        entries_.push_back({round, client, seconds, wh});
        return wh;
    }

    std::vector<EnergyEntry> entries() const {
        std::lock_guard lock(mutex_);
        return entries_;
    }

    double total_wh() const {
        std::lock_guard lock(mutex_);
        return total(entries_);
    }

private:
    mutable std::mutex mutex_;
    std::vector<EnergyEntry> entries_;
};

inline double total(const EnergyLedger& ledger) { return ledger.total_wh(); }

}  // namespace fedsim
