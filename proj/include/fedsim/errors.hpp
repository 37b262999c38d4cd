#pragma once

#include <stdexcept>
#include <string>

namespace fedsim {

// Base of every error raised by the library.
class error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// IDX ingestion
class idx_error : public error {
public:
    using error::error;
};
class idx_magic_error : public idx_error {
public:
    using idx_error::idx_error;
};
class idx_truncated_error : public idx_error {
public:
    using idx_error::idx_error;
};
class idx_count_mismatch_error : public idx_error {
public:
    using idx_error::idx_error;
};

class partition_error : public error {
public:
    using error::error;
};

// metrics
class dimension_mismatch_error : public error {
public:
    using error::error;
};
class invalid_distribution_error : public error {
public:
    using error::error;
};
class unsupported_metric_error : public error {
public:
    using error::error;
};

class shape_mismatch_error : public error {
public:
    using error::error;
};

// Raised by training when the loss becomes NaN/inf. Carries the round and
// client so harness logs can point at the offending cell.
class non_finite_loss_error : public error {
public:
    non_finite_loss_error(const std::string& what, long round, long client)
        : error(what), round_(round), client_(client) {}
    long round() const noexcept { return round_; }
    long client() const noexcept { return client_; }

private:
    long round_;
    long client_;
};

class config_error : public error {
public:
    using error::error;
};

}  // namespace fedsim
