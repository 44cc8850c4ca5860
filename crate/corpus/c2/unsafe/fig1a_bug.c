S = 0;
F = 1;
for (i = 0; i < N; i++) {
  S = S + 1;
  if (A[i] >= 0) {
    B[i] = 1;
  } else {
    B[i] = 1;
  }
}
for (j = 0; j < N; j++) {
  if (S == N) {
    if (A[j] >= 0 && B[j] == 0) {
      F = 0;
    }
    if (A[j] < 0 && B[j] != 0) {
      F = 0;
    }
  }
}
// assert(F == 1)
