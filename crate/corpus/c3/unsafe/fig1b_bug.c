S = 0;
for (i = 0; i < N; i++) {
  A[i] = 0;
}
for (j = 0; j < N; j++) {
  S = S + 1;
}
for (k = 0; k < N; k++) {
  for (l = 0; l < N; l++) {
    A[l] = A[l] + 1;
  }
  A[k] = A[k] + S;
}
// assert(forall x in [0, N) :: A[x] == 2 * N + 1)
