for (i = 0; i < N; i++) {
  A[i] = i;
  B[i] = i;
}
F = 1;
for (j = 0; j < N; j++) {
  if (A[j] != B[j]) {
    F = 0;
  }
}
// assert(F == 1)
