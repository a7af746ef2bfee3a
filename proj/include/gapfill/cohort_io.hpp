#pragma once

#include <istream>
#include <ostream>

#include "gapfill/data.hpp"
#include "gapfill/masking.hpp"

namespace gapfill {

/// Writes one raw CSV row per (segment, timestamp) with confidence 100.
void write_raw_csv(const Cohort& cohort, std::ostream& out);

/// Cohort interchange: the raw schema plus a trailing `observed` column holding
/// one 0/1 digit per stream (speed first). Missing values are written as 0.
void write_cohort_csv(const Cohort& cohort, std::ostream& out);

/// Reads either the interchange format or a raw CSV already on a shared grid
/// (no `observed` column means fully observed).
Cohort read_cohort_csv(std::istream& in);

void write_ledger_csv(const GroundTruthLedger& ledger, std::ostream& out);
GroundTruthLedger read_ledger_csv(std::istream& in);

}  // namespace gapfill
