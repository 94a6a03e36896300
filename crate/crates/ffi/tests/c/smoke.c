#include <math.h>
#include <stdio.h>
#include "delaypred.h"

#define CHECK(cond)                                              \
  do {                                                           \
    if (!(cond)) {                                               \
      char msg[256];                                             \
      dp_last_error_message(msg, sizeof msg);                    \
      fprintf(stderr, "line %d: %s (%s)\n", __LINE__, #cond, msg); \
      return 1;                                                  \
    }                                                            \
  } while (0)

int main(void) {
  double a = 1.0, b = 1.0, k = -1.93;
  DpLinearSystem *sys = NULL;
  CHECK(dp_linear_system_new(&a, &b, &k, 1, 1, 1.0, &sys) == DP_STATUS_OK);

  uint64_t n_grid = 0;
  CHECK(dp_min_grid_count(sys, 1.0, 1.0 / 0.93, &n_grid) == DP_STATUS_OK);
  CHECK(n_grid == 65);

  double zero = 0.0;
  DpTrajectory *traj = NULL;
  double x0 = 1.0;
  CHECK(dp_linear_simulate(sys, n_grid, DP_SCHEDULE_UNIFORM, 1.0, 0, &x0, 1, &zero, 1, 30.0, 0, &traj) ==
        DP_STATUS_OK);
  DpDecayFit fit;
  CHECK(dp_trajectory_decay_fit(traj, &fit) == DP_STATUS_OK);
  CHECK(fit.rate > 0.0);

  double unstable = 1.0;
  DpLinearSystem *bad = NULL;
  CHECK(dp_linear_system_new(&a, &b, &unstable, 1, 1, 1.0, &bad) == DP_STATUS_OK);
  double gamma = 0.0;
  CHECK(dp_iss_gain(bad, 1.05, &gamma) == DP_STATUS_NOT_HURWITZ);
  CHECK(dp_last_error_message(NULL, 0) > 1);

  dp_trajectory_free(traj);
  dp_linear_system_free(bad);
  dp_linear_system_free(sys);
  printf("ok\n");
  return 0;
}
