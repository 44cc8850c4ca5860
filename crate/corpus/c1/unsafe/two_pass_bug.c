for (i = 0; i < N; i++) {
  A[i] = 2 * i;
}
for (j = 0; j < N; j++) {
  B[j] = A[j] + 1;
}
// assert(forall j in [0, N) :: B[j] == 2 * j)
