#include <math.h>
#include <stdio.h>
#include <string.h>

#include "merton_risk.h"

static const char *PROBLEM =
    "{\"market\": {\"T\": 1.0, \"d\": 1,"
    " \"r\": [{\"t0\": 0.0, \"value\": 0.0}],"
    " \"mu\": [{\"t0\": 0.0, \"value\": [0.1]}],"
    " \"sigma\": [{\"t0\": 0.0, \"value\": [[0.2]]}]},"
    " \"utility\": {\"gamma1\": 0.5, \"gamma2\": 0.5},"
    " \"risk\": {\"kind\": \"var\", \"alpha\": 0.01, \"zeta\": 0.1},"
    " \"x0\": 1.0}";

int main(void) {
    MrProblem *p = NULL;
    MrSolution *s = NULL;
    double value, pi, v;
    if (mr_problem_from_json(PROBLEM, &p) != MR_STATUS_OK) return 1;
    if (mr_problem_solve(p, &s) != MR_STATUS_OK) return 2;
    if (mr_solution_value(s, &value) != MR_STATUS_OK) return 3;
    if (fabs(value - 1.2649110640673518) > 1e-12) return 4;
    if (strcmp(mr_solution_regime(s), "var-tight") != 0) return 5;
    if (mr_solution_controls(s, 0.5, &pi, 1, &v) != MR_STATUS_OK || pi != 0.0) return 6;
    if (mr_problem_from_json("{", &p) != MR_STATUS_PARSE_ERROR || mr_last_error_message() == NULL) return 7;
    mr_solution_free(s);
    printf("ok %s\n", mr_version());
    return 0;
}
